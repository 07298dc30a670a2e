"""Experiment pipelines shared by the CLI and the acceptance suite."""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .adjust import average_ensemble, coarse_to_fine, decode, hca_add, hca_mul
from .data import Dataset, gen_synthetic, load_csv, subsample_imbalanced
from .distill import teacher_outputs, train_stage2
from .heads import (TrainConfig, TwoLayerHead, ce_from_logits, fit, softmax,
                    train_stage1)
from .labels import level_targets
from .metrics import SHOTS, bmae, evaluate, per_head_inconsistency, inconsistency_rate, quantization_error
from .quantize import Hierarchy, build_finest_bins, build_hierarchy, hierarchy_from_groups

METHODS = ("CLS", "Same-CLSs", "Average", "HCA-add", "HCA-mul", "HCA-d", "HCA-sum", "CLS+GT-sup")


def parse_list(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def parse_methods(text):
    methods = parse_list(text)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        from .config import ConfigError

        raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
    return methods


def train_config(cfg, n_train, seed, epochs=None, min_steps=None):
    t = cfg["train"]
    epochs = t["epochs"] if epochs is None else epochs
    min_steps = t["min_steps"] if min_steps is None else min_steps
    steps_per_epoch = max(1, math.ceil(n_train / t["batch_size"]))
    epochs = max(epochs, math.ceil(min_steps / steps_per_epoch))
    return TrainConfig(epochs=epochs, batch_size=t["batch_size"], lr=t["lr"],
                       optimizer=t["optimizer"], seed=seed, weight_decay=t["weight_decay"])


def _target_spec(cfg, kind):
    d = cfg["data"]
    return {"kind": kind, "low": d["low"], "high": d["high"], "scale": d["scale"],
            "split": d["split"], "head_fraction": d["head_fraction"],
            "projection_seed": d["projection_seed"]}


def make_dataset(cfg, seed):
    """Train split from the training distribution; val/test from the test distribution."""
    d = cfg["data"]
    if d["source"] == "csv":
        if not d["csv_path"]:
            from .config import ConfigError

            raise ConfigError("data.source = csv needs data.csv_path")
        return load_csv(d["csv_path"])
    if d["source"] != "synthetic":
        from .config import ConfigError

        raise ConfigError(f"unknown data.source {d['source']!r}")
    tr = gen_synthetic(_target_spec(cfg, d["distribution"]), d["n_train"], d["dim"], d["noise"],
                       seed=seed, fractions=(1, 0, 0), stratify_bins=0)
    n_eval = d["n_val"] + d["n_test"]
    ev = gen_synthetic(_target_spec(cfg, d["test_distribution"]), n_eval, d["dim"], d["noise"],
                       seed=seed + 100_003, fractions=(0, d["n_val"], d["n_test"]), stratify_bins=0)
    out = Dataset(np.vstack([tr.features, ev.features]), np.concatenate([tr.targets, ev.targets]),
                  np.concatenate([tr.splits, ev.splits]),
                  {"train": tr.metadata, "eval": ev.metadata})
    return out


def build_quantization(cfg, y_train):
    q = cfg["quantize"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fine = build_finest_bins(y_train, q["scheme"], q["n_classes"], q["log_offset"])
        return build_hierarchy(fine, y_train, q["levels"], q["mode"])


@dataclass
class Pipeline:
    hierarchy: Hierarchy
    heads: list
    train_counts: np.ndarray
    distilled: dict = field(default_factory=dict)
    same: list = field(default_factory=list)
    gt_sup: object = None
    logs: dict = field(default_factory=dict)


def _sigma(cfg):
    s = cfg["labels"]["sigma"]
    return None if s <= 0 else s


def fit_pipeline(cfg, train, hierarchy, seed, methods, val=None, train_cfg=None):
    """Train everything the requested methods need on ``(F, y)``."""
    F, y = train
    lab = cfg["labels"]
    tcfg = train_cfg or train_config(cfg, y.size, seed)
    heads, log1 = train_stage1((F, y), hierarchy, lab["mode"], lab["lds"], tcfg, val=val,
                               sigma=_sigma(cfg), lds_params=(lab["lds_half_width"], lab["lds_sigma"]))
    pipe = Pipeline(hierarchy, heads, hierarchy.finest.counts.copy(), logs={"stage1": log1})
    dist = cfg["distill"]
    kw = dict(stage1_epochs=tcfg.epochs, fraction=dist["fraction"],
              early_stop=(dist["early_stop_window"], dist["early_stop_tol"]),
              hidden=dist["hidden"] or None)
    teachers = None
    for method, alignment in (("HCA-d", "max"), ("HCA-sum", "sum")):
        if method in methods:
            if teachers is None:
                teachers = teacher_outputs(heads, F)
            pipe.distilled[alignment], pipe.logs[method] = train_stage2(
                teachers, F, hierarchy, tcfg, alignment, **kw)
    if "Same-CLSs" in methods:
        flat = Hierarchy((hierarchy.finest,), "flat")
        for k in range(hierarchy.H):
            c = TrainConfig(**{**tcfg.__dict__, "seed": tcfg.seed + 7777 * (k + 1)})
            pipe.same.append(train_stage1((F, y), flat, lab["mode"], lab["lds"], c,
                                          sigma=_sigma(cfg),
                                          lds_params=(lab["lds_half_width"], lab["lds_sigma"]))[0][0])
    if "CLS+GT-sup" in methods:
        pipe.gt_sup = _train_gt_sup(F, y, hierarchy, tcfg, cfg)
    return pipe


def _train_gt_sup(F, y, hierarchy, tcfg, cfg):
    """Second-stage head supervised by ground-truth finest labels instead of teachers."""
    dist = cfg["distill"]
    target = level_targets(y, hierarchy, cfg["labels"]["mode"], _sigma(cfg))[-1]
    rng = np.random.default_rng(tcfg.seed + 7919)
    head = TwoLayerHead(F.shape[1], hierarchy.finest.n_classes, level=hierarchy.H, rng=rng,
                        hidden=dist["hidden"] or None)
    epochs = max(1, math.ceil(dist["fraction"] * tcfg.epochs))
    fit([head], F, [lambda Z, idx: ce_from_logits(Z, target[idx])], tcfg, rng, epochs=epochs,
        early_stop=(dist["early_stop_window"], dist["early_stop_tol"]))
    return head


def scores(pipe, method, F):
    """Finest-level score vectors for ``method`` on features ``F``."""
    hier = pipe.hierarchy
    if method in ("HCA-d", "HCA-sum"):
        return softmax(pipe.distilled["max" if method == "HCA-d" else "sum"].logits(F))
    if method == "CLS+GT-sup":
        return softmax(pipe.gt_sup.logits(F))
    if method == "Same-CLSs":
        probs = [softmax(h.logits(F)) for h in pipe.same]
        eye = np.eye(hier.finest.n_classes)
        return hca_add(probs, [eye] * (len(probs) - 1))
    P = teacher_outputs(pipe.heads, F)
    if method == "CLS":
        return P[-1]
    trans = hier.transitions()
    if method == "Average":
        return average_ensemble(P, trans)
    if method == "HCA-add":
        return hca_add(P, trans)
    if method == "HCA-mul":
        return hca_mul(P, trans)
    raise ValueError(f"unknown method {method!r}")


def predict(pipe, method, F):
    return decode(scores(pipe, method, F), pipe.hierarchy)


def evaluate_methods(cfg, pipe, test, methods):
    F, y = test
    e = cfg["eval"]
    return [evaluate(m, predict(pipe, m, F), y, pipe.hierarchy, pipe.train_counts,
                     e["shot_hi"], e["shot_lo"]) for m in methods]


def run_compare(cfg, methods=None, seeds=None):
    """Train and evaluate every method for each seed; returns reports per seed."""
    methods = parse_methods(cfg["eval"]["methods"]) if methods is None else methods
    base = cfg["run"]["seed"]
    seeds = list(range(base, base + cfg["run"]["seeds"])) if seeds is None else seeds
    out = []
    for seed in seeds:
        ds = make_dataset(cfg, seed)
        train, test = ds.part("train"), ds.part("test")
        hier = build_quantization(cfg, train[1])
        pipe = fit_pipeline(cfg, train, hier, seed, methods)
        out.append({"seed": seed, "hierarchy": hier,
                    "reports": evaluate_methods(cfg, pipe, test, methods)})
    return out


def aggregate(runs, metric="bmae"):
    """``{method: {shot: (mean, std)}}`` over seeds."""
    table = {}
    for run in runs:
        for r in run["reports"]:
            for s in SHOTS:
                table.setdefault(r.method, {}).setdefault(s, []).append(r.by_shot[s][metric])
    return {m: {s: (float(np.mean(v)), float(np.std(v))) for s, v in d.items()}
            for m, d in table.items()}


# ---- Table 5 protocol -------------------------------------------------------

def table5_cells(cfg):
    t = cfg["table5"]
    totals = [int(x) for x in parse_list(t["totals"])]
    cells = []
    for ratio, kind in ((1.0, "balanced"), (t["ratio"], "imbalanced")):
        for total in totals:
            head = round(total * ratio / (ratio + 1))
            cells.append({"name": f"{head}:{total - head}", "kind": kind, "ratio": ratio, "total": total})
    wanted = t["cells"]
    if wanted != "all":
        names = parse_list(wanted)
        known = {c["name"] for c in cells}
        bad = [n for n in names if n not in known]
        if bad:
            from .config import ConfigError

            raise ConfigError(f"unknown table5 cells {bad}; known {sorted(known)}")
        cells = [c for c in cells if c["name"] in names]
    return cells


def table5_run(cfg, cell, seed, methods):
    """One (cell, seed) run of the balanced/imbalanced subset protocol."""
    t, d = cfg["table5"], cfg["data"]
    low, high = t["head_low"], t["tail_high"]
    spec = {"kind": "uniform", "low": low, "high": high, "projection_seed": d["projection_seed"]}
    nbins = 2 * t["bins_per_side"]
    per_bin = max(cell["total"], 1) + 10
    pool = gen_synthetic(spec, int(nbins * per_bin * 1.6) + 200, d["dim"], d["noise"],
                         seed=seed + 5000, fractions=(1, 0, 0), stratify_bins=0)
    train = subsample_imbalanced(pool, (t["head_low"], t["head_high"]), (t["tail_low"], t["tail_high"]),
                                 cell["ratio"], cell["total"], t["bins_per_side"], seed=seed)
    test = gen_synthetic(spec, nbins * t["test_per_bin"], d["dim"], d["noise"], seed=seed + 9000,
                         fractions=(0, 0, 1), stratify_bins=nbins)
    sub = cfg.copy()
    sub.values["quantize"] = dict(cfg["quantize"], n_classes=t["n_classes"])
    F, y = train.features, train.targets
    hier = build_quantization(sub, y)
    tcfg = train_config(sub, y.size, seed, epochs=t["epochs"], min_steps=t["min_steps"])
    pipe = fit_pipeline(sub, (F, y), hier, seed, methods, train_cfg=tcfg)
    Ft, yt = test.part("test")
    return {m: bmae(predict(pipe, m, Ft), yt, hier) for m in methods}


def run_table5(cfg, cells=None, seeds=None, methods=None):
    t = cfg["table5"]
    methods = parse_methods(t["methods"]) if methods is None else methods
    cells = table5_cells(cfg) if cells is None else cells
    base = cfg["run"]["seed"]
    seeds = list(range(base, base + t["seeds"])) if seeds is None else seeds
    results = {}
    for cell in cells:
        results[cell["name"]] = [table5_run(cfg, cell, s, methods) for s in seeds]
    return results


# ---- analyses ---------------------------------------------------------------

def analyze_levels(pipe, test):
    """Per-level quantization error, individual bMAE and coarse-to-fine bMAE."""
    F, y = test
    hier = pipe.hierarchy
    P = teacher_outputs(pipe.heads, F)
    rows = []
    for h in range(1, hier.H + 1):
        individual = bmae(decode(P[h - 1], hier, h), y, hier)
        if h < hier.H:
            T = hier.transitions()[h - 1]
            c2f = bmae(hier.finest.representatives[coarse_to_fine(P[h - 1], P[-1], T)], y, hier)
        else:
            c2f = individual
        rows.append({"level": h, "n_classes": hier.level(h).n_classes,
                     "quantization_error": quantization_error(y, hier, h),
                     "individual_bmae": individual, "coarse_to_fine_bmae": c2f,
                     "mean_max_prob": float(P[h - 1].max(axis=1).mean())})
    return rows


def analyze_inconsistency(pipe, test):
    """Per-level inconsistency of finest-resolution predictions under both alignments."""
    F, _ = test
    hier = pipe.hierarchy
    trans = hier.transitions()
    sources = {"CLS": teacher_outputs(pipe.heads, F)[-1]}
    for alignment, head in sorted(pipe.distilled.items()):
        sources[f"HCA-d-{alignment}"] = softmax(head.logits(F))
    rows = []
    for name, p in sources.items():
        rates = {a: inconsistency_rate(p, trans, a) for a in ("sum", "max")}
        for h in range(1, hier.H):
            rows.append({"source": name, "level": h, "n_classes": hier.level(h).n_classes,
                         "sum_rate": float(rates["sum"][h - 1]), "max_rate": float(rates["max"][h - 1])})
    return rows


def uniform_hierarchy(n_classes, H=None):
    """Nested hierarchy on ``[0, n_classes]`` with ``2**h`` equal groups per level."""
    H = H or int(math.log2(n_classes))
    edges = np.arange(n_classes + 1, dtype=np.float64)
    bounds = [[k * n_classes // 2 ** h for k in range(1, 2 ** h)] for h in range(1, H)]
    return hierarchy_from_groups(edges, bounds)


def dirichlet_inconsistency(n_classes=128, samples=10_000, seed=0, alignment="sum"):
    """Per-head Monte Carlo: Dirichlet(1) predictions of each level pooled to all coarser ones."""
    hier = uniform_hierarchy(n_classes)
    rng = np.random.default_rng(seed)
    probs = [rng.dirichlet(np.ones(hier.level(h).n_classes), size=samples) for h in range(1, hier.H + 1)]
    rates, peaks = per_head_inconsistency(probs, hier, alignment)
    return hier, rates, peaks
