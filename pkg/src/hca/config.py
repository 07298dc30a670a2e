"""Flat INI-style experiment configuration with strict keys."""

import configparser
import hashlib
import io

DEFAULTS = {
    "run": {
        "seed": 0,
        "seeds": 3,
        "output_dir": "runs",
    },
    "data": {
        "source": "synthetic",
        "csv_path": "",
        "distribution": "exponential",
        "low": 0.0,
        "high": 100.0,
        "scale": 15.0,
        "split": 50.0,
        "head_fraction": 0.95,
        "n_train": 3000,
        "test_distribution": "uniform",
        "n_val": 500,
        "n_test": 4000,
        "dim": 32,
        "noise": 0.1,
        "projection_seed": 1234,
    },
    "quantize": {
        "scheme": "linear",
        "n_classes": 100,
        "levels": 7,
        "mode": "equal-count",
        "log_offset": 0.0,
    },
    "labels": {
        "mode": "soft",
        "sigma": 0.0,
        "lds": False,
        "lds_half_width": 2,
        "lds_sigma": 1.0,
    },
    "train": {
        "epochs": 100,
        "min_steps": 0,
        "batch_size": 64,
        "lr": 0.01,
        "optimizer": "adam",
        "weight_decay": 0.0,
    },
    "distill": {
        "fraction": 0.2,
        "early_stop_window": 10,
        "early_stop_tol": 1e-4,
        "hidden": 0,
    },
    "eval": {
        "methods": "CLS,Same-CLSs,Average,HCA-add,HCA-mul,HCA-d,HCA-sum,CLS+GT-sup",
        "method": "HCA-d",
        "shot_hi": 100,
        "shot_lo": 20,
    },
    "analyze": {
        "mc_samples": 10000,
        "mc_classes": 128,
    },
    "table5": {
        "head_low": 20.0,
        "head_high": 35.0,
        "tail_low": 35.0,
        "tail_high": 50.0,
        "bins_per_side": 15,
        "totals": "2000,200,20",
        "ratio": 19.0,
        "cells": "all",
        "seeds": 5,
        "test_per_bin": 100,
        "methods": "CLS,HCA-add,HCA-mul,HCA-d",
        "n_classes": 30,
        "epochs": 50,
        "min_steps": 3000,
    },
}


# Sections that determine a trained checkpoint; `train`, `distill` and
# `eval` share a run directory keyed on these alone.
MODEL_SECTIONS = ("run", "data", "quantize", "labels", "train", "distill")


class ConfigError(ValueError):
    pass


def _coerce(section, key, raw):
    default = DEFAULTS[section][key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


class Config:
    def __init__(self, values):
        self.values = values

    def __getitem__(self, section):
        return self.values[section]

    def get(self, section, key):
        return self.values[section][key]

    def copy(self):
        return Config({s: dict(v) for s, v in self.values.items()})

    def set(self, section, key, value):
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        if isinstance(value, str):
            value = _coerce(section, key, value)
        self.values[section][key] = value

    def to_text(self, sections=None):
        buf = io.StringIO()
        for section in sections or DEFAULTS:
            buf.write(f"[{section}]\n")
            for key in DEFAULTS[section]:
                v = self.values[section][key]
                if isinstance(v, bool):
                    v = "true" if v else "false"
                buf.write(f"{key} = {v}\n")
            buf.write("\n")
        return buf.getvalue()

    def digest(self, sections=None):
        return hashlib.sha256(self.to_text(sections).encode()).hexdigest()[:12]


def default_config():
    return Config({s: dict(v) for s, v in DEFAULTS.items()})


def parse_config(text, source="<config>"):
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = default_config()
    for section in cp.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            cfg.values[section][key] = _coerce(section, key, raw)
    return cfg


def load_config(path=None, overrides=()):
    if path is None:
        cfg = default_config()
    else:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        cfg = parse_config(text, str(path))
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        cfg.set(section, key, value)
    return cfg
