"""Synthetic imbalanced regression data, CSV ingestion and subset protocols."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

SPLITS = ("train", "val", "test")
DISTRIBUTIONS = ("uniform", "exponential", "head-tail")


@dataclass
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    splits: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.targets = np.asarray(self.targets, dtype=np.float64).ravel()
        self.splits = np.asarray(self.splits, dtype=object).ravel()
        n = self.targets.size
        if self.features.shape[0] != n or self.splits.size != n:
            raise ValueError("features, targets and splits must have the same length")
        if not np.all(np.isfinite(self.targets)):
            raise ValueError("targets must be finite")
        bad = set(self.splits) - set(SPLITS)
        if bad:
            raise ValueError(f"unknown split tags {sorted(bad)}")

    def __len__(self):
        return self.targets.size

    @property
    def dim(self):
        return self.features.shape[1]

    def part(self, split):
        m = self.splits == split
        return self.features[m], self.targets[m]

    def select(self, mask_or_idx, split=None):
        sp = self.splits[mask_or_idx] if split is None else np.full(
            self.targets[mask_or_idx].size, split, dtype=object)
        return Dataset(self.features[mask_or_idx], self.targets[mask_or_idx], sp, dict(self.metadata))

    def __eq__(self, other):
        return (isinstance(other, Dataset)
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.targets, other.targets)
                and np.array_equal(self.splits, other.splits))


def sample_targets(spec, n, rng):
    """Draw ``n`` targets from a distribution spec dict.

    ``uniform``: ``low``/``high``. ``exponential``: ``low`` plus an
    exponential with ``scale``, truncated at ``high`` by resampling.
    ``head-tail``: uniform over ``[low, split)`` with probability
    ``head_fraction``, otherwise uniform over ``[split, high]``.
    """
    kind = spec.get("kind")
    lo, hi = float(spec.get("low", 0.0)), float(spec.get("high", 1.0))
    if not hi > lo:
        raise ValueError("target spec needs high > low")
    if kind == "uniform":
        return rng.uniform(lo, hi, n)
    if kind == "exponential":
        scale = float(spec.get("scale", (hi - lo) / 4))
        if not scale > 0:
            raise ValueError("exponential scale must be positive")
        out = lo + rng.exponential(scale, n)
        bad = out > hi
        while bad.any():
            out[bad] = lo + rng.exponential(scale, int(bad.sum()))
            bad = out > hi
        return out
    if kind == "head-tail":
        split = float(spec.get("split", (lo + hi) / 2))
        frac = float(spec.get("head_fraction", 0.95))
        if not lo < split < hi or not 0 < frac < 1:
            raise ValueError("head-tail spec needs low < split < high and 0 < head_fraction < 1")
        head = rng.random(n) < frac
        return np.where(head, rng.uniform(lo, split, n), rng.uniform(split, hi, n))
    raise ValueError(f"unknown target distribution {kind!r}")


def embed(targets, d, noise, rng_proj, rng_noise, low, high):
    """Features from a fixed random projection of ``[u, u**2, sin(pi u)]``.

    ``u`` rescales targets from ``[low, high]`` to ``[-1, 1]`` so the basis
    terms have comparable scale.
    """
    u = 2.0 * (np.asarray(targets, dtype=np.float64) - low) / (high - low) - 1.0
    basis = np.stack([u, u ** 2, np.sin(np.pi * u)], axis=1)
    A = rng_proj.standard_normal((3, d)) / np.sqrt(3.0)
    F = basis @ A
    if noise > 0:
        F = F + noise * rng_noise.standard_normal(F.shape)
    return F


def assign_splits(targets, fractions, rng, edges=None):
    """Split tags stratified by bin (when ``edges`` given) in the given fractions."""
    n = targets.size
    tags = np.empty(n, dtype=object)
    if edges is None:
        groups = [np.arange(n)]
    else:
        from .quantize import value_to_class

        b = value_to_class(targets, edges)
        groups = [np.flatnonzero(b == k) for k in range(len(edges) - 1)]
    fr = np.asarray(fractions, dtype=np.float64)
    fr = fr / fr.sum()
    for idx in groups:
        idx = rng.permutation(idx)
        cuts = np.floor(np.cumsum(fr) * idx.size + 1e-9).astype(int)
        start = 0
        for name, stop in zip(SPLITS, cuts):
            tags[idx[start:stop]] = name
            start = stop
    return tags


def gen_synthetic(spec, n, d=32, noise=0.1, seed=0, fractions=(0.7, 0.1, 0.2), stratify_bins=10):
    """Generate a seeded synthetic regression dataset.

    The projection matrix is seeded by ``spec.get("projection_seed", seed)``,
    so datasets that must share a feature space (e.g. train pools and test
    sets) can pin it.
    """
    if n < 2 or d < 1:
        raise ValueError("need n >= 2 and d >= 1")
    rng = np.random.default_rng(seed)
    y = sample_targets(spec, n, rng)
    low, high = float(spec.get("low", 0.0)), float(spec.get("high", 1.0))
    proj = np.random.default_rng(spec.get("projection_seed", seed))
    F = embed(y, d, noise, proj, rng, low, high)
    edges = np.linspace(low, high, stratify_bins + 1) if stratify_bins else None
    tags = assign_splits(y, fractions, rng, edges)
    meta = {"generator": dict(spec), "n": n, "d": d, "noise": noise, "seed": seed}
    return Dataset(F, y, tags, meta)


def largest_remainder(total, weights):
    """Integer allocation of ``total`` proportional to ``weights``."""
    w = np.asarray(weights, dtype=np.float64)
    raw = total * w / w.sum()
    base = np.floor(raw).astype(int)
    rem = total - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rem]] += 1
    return base


def subsample_imbalanced(dataset, head_range, tail_range, ratio, total, bins_per_side=15,
                         seed=0, split="train"):
    """Resample to a fixed per-bin budget with a head:tail ratio.

    Each side is cut into ``bins_per_side`` equal-width bins. Every pair of
    one head bin and one tail bin shares ``total`` samples split
    ``ratio : 1`` (largest remainder), so ``ratio=19, total=2000`` gives
    1900 per head bin and 100 per tail bin, and the overall sample count
    is ``bins_per_side * total`` whatever the ratio.
    """
    if ratio <= 0 or total < 1:
        raise ValueError("ratio and total must be positive")
    head_n, tail_n = largest_remainder(total, [ratio, 1.0])
    rng = np.random.default_rng(seed)
    chosen = []
    for (lo, hi), per_bin in ((head_range, head_n), (tail_range, tail_n)):
        edges = np.linspace(lo, hi, bins_per_side + 1)
        for k in range(bins_per_side):
            last = k == bins_per_side - 1
            m = (dataset.targets >= edges[k]) & ((dataset.targets <= edges[k + 1]) if last
                                                 else (dataset.targets < edges[k + 1]))
            idx = np.flatnonzero(m)
            if idx.size < per_bin:
                raise ValueError(
                    f"bin [{edges[k]:.4g}, {edges[k + 1]:.4g}) has {idx.size} samples, need {per_bin}")
            chosen.append(rng.choice(idx, size=per_bin, replace=False))
    idx = np.sort(np.concatenate(chosen))
    out = dataset.select(idx, split=split)
    out.metadata["subsample"] = {"head_range": list(head_range), "tail_range": list(tail_range),
                                 "ratio": ratio, "total": total, "per_bin": [int(head_n), int(tail_n)],
                                 "bins_per_side": bins_per_side, "seed": seed}
    return out


def save_csv(dataset, path):
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(dataset.metadata, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target", "split"] + [f"f{i}" for i in range(dataset.dim)])
        for y, s, f in zip(dataset.targets, dataset.splits, dataset.features):
            w.writerow([f"{y:.17g}", s] + [f"{x:.17g}" for x in f])


def load_csv(path):
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    meta = {}
    if lines and lines[0].startswith("#"):
        meta = json.loads(lines[0][1:])
        lines = lines[1:]
    if not lines:
        raise ValueError(f"{path}: empty file")
    rows = list(csv.reader(lines))
    header = [c.strip() for c in rows[0]]
    for col in ("target", "split"):
        if col not in header:
            raise ValueError(f"{path}: missing required column {col!r}")
    fcols = [c for c in header if c not in ("target", "split")]
    if not fcols:
        raise ValueError(f"{path}: no feature columns")
    ti, si = header.index("target"), header.index("split")
    fi = [header.index(c) for c in fcols]
    ys, ss, fs = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
        try:
            ys.append(float(row[ti]))
            fs.append([float(row[i]) for i in fi])
        except ValueError as exc:
            raise ValueError(f"{path}: row {lineno}: {exc}") from None
        ss.append(row[si].strip())
    if not ys:
        raise ValueError(f"{path}: no data rows")
    return Dataset(np.array(fs), np.array(ys), np.array(ss, dtype=object), meta)
