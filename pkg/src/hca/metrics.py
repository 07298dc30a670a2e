"""Regression metrics with imbalance-aware slicing."""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .quantize import value_to_class

SHOTS = ("all", "many", "medium", "few")


def _pair(preds, targets):
    p = np.asarray(preds, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size != t.size:
        raise ValueError(f"{p.size} predictions for {t.size} targets")
    if p.size == 0:
        raise ValueError("no samples")
    return p, t


def mae(preds, targets):
    p, t = _pair(preds, targets)
    return float(np.mean(np.abs(p - t)))


def rmse(preds, targets):
    p, t = _pair(preds, targets)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def _bins_of(targets, hierarchy=None, edges=None):
    e = hierarchy.finest.edges if edges is None else np.asarray(edges, dtype=np.float64)
    return value_to_class(targets, e), e.size - 1


def per_bin_mae(preds, targets, hierarchy=None, edges=None):
    """MAE per finest bin (NaN for bins with no test target) and bin counts."""
    p, t = _pair(preds, targets)
    b, n = _bins_of(t, hierarchy, edges)
    counts = np.bincount(b, minlength=n)
    sums = np.bincount(b, weights=np.abs(p - t), minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / counts, np.nan), counts


def bmae(preds, targets, hierarchy=None, edges=None):
    """Mean over non-empty target bins of the per-bin MAE."""
    per, counts = per_bin_mae(preds, targets, hierarchy, edges)
    return float(np.mean(per[counts > 0]))


def shot_split(train_counts, hi=100, lo=20):
    """Label each bin ``many`` (count > hi), ``few`` (count < lo) or ``medium``."""
    if lo >= hi:
        raise ValueError("lo must be below hi")
    c = np.asarray(train_counts)
    if np.any(c < 0):
        raise ValueError("negative counts")
    return np.where(c > hi, "many", np.where(c < lo, "few", "medium"))


def quantization_error(targets, hierarchy, h):
    """MAE of a perfect level-``h`` classifier: targets vs their bin's representative."""
    t = np.asarray(targets, dtype=np.float64).ravel()
    if t.size == 0:
        raise ValueError("no targets")
    lv = hierarchy.level(h)
    return float(np.mean(np.abs(t - lv.representatives[value_to_class(t, lv.edges)])))


def inconsistency_rate(pT, transitions, alignment="sum"):
    """Per coarse level, the fraction of rows whose fine argmax leaves the aligned argmax range."""
    from .distill import check_range_preserving

    p = np.atleast_2d(np.asarray(pT, dtype=np.float64))
    if p.shape[0] == 0:
        raise ValueError("empty batch")
    return np.array([1.0 - check_range_preserving(p, [T], alignment).mean() for T in transitions])


def per_head_inconsistency(level_probs, hierarchy, alignment="sum"):
    """Inconsistency of each head's own prediction pooled to every coarser level.

    ``level_probs[h-1]`` is a batch of level-``h`` predictions. Level ``h``
    counts a row as inconsistent if pooling it to any level below ``h``
    moves the argmax outside the coarse argmax range. Returns the rates and
    the mean maximum probability per level.
    """
    from .distill import check_range_preserving

    rates, peaks = [], []
    for h, p in enumerate(level_probs, start=1):
        p = np.atleast_2d(p)
        trans = [_sub_transition(hierarchy, l, h) for l in range(1, h)]
        ok = check_range_preserving(p, trans, alignment) if trans else np.ones(p.shape[0], bool)
        rates.append(1.0 - float(np.mean(ok)))
        peaks.append(float(p.max(axis=1).mean()))
    return np.array(rates), np.array(peaks)


def _sub_transition(hierarchy, lo, hi):
    """Transition between two levels, valid when level ``lo`` nests in level ``hi``."""
    g_lo, g_hi = hierarchy.group_of(lo), hierarchy.group_of(hi)
    T = np.zeros((hierarchy.level(lo).n_classes, hierarchy.level(hi).n_classes))
    T[g_lo, g_hi] = 1.0
    if not np.all(T.sum(axis=0) == 1):
        raise ValueError(f"level {lo} does not nest in level {hi}")
    return T


@dataclass
class EvalReport:
    method: str
    metrics: dict
    by_shot: dict
    per_class_mae: np.ndarray
    quantization_error: float
    counts: dict = field(default_factory=dict)

    def row(self, metric="bmae"):
        return [self.by_shot[s].get(metric, float("nan")) for s in SHOTS]


def evaluate(method, preds, targets, hierarchy, train_counts=None, hi=100, lo=20):
    """Full report: MAE/RMSE/bMAE overall and per shot group."""
    p, t = _pair(preds, targets)
    fine = hierarchy.finest
    bins = value_to_class(t, fine.edges)
    per, counts = per_bin_mae(p, t, hierarchy)
    if train_counts is None:
        train_counts = fine.counts
    shots = shot_split(train_counts, hi, lo)
    by_shot, n_by = {}, {}
    for s in SHOTS:
        mask = np.ones(t.size, bool) if s == "all" else shots[bins] == s
        n_by[s] = int(mask.sum())
        if mask.any():
            by_shot[s] = {"mae": mae(p[mask], t[mask]), "rmse": rmse(p[mask], t[mask]),
                          "bmae": bmae(p[mask], t[mask], hierarchy)}
        else:
            by_shot[s] = {"mae": float("nan"), "rmse": float("nan"), "bmae": float("nan")}
    return EvalReport(method, dict(by_shot["all"]), by_shot, per,
                      quantization_error(t, hierarchy, hierarchy.H), n_by)


def _fmt(x):
    return "nan" if not np.isfinite(x) else f"{x:.4f}"


def reports_to_markdown(reports, metrics=("bmae", "mae")):
    head = ["Method"] + [f"{m.upper() if m != 'bmae' else 'bMAE'} {s}" for m in metrics for s in SHOTS]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for r in reports:
        cells = [r.method] + [_fmt(r.by_shot[s][m]) for m in metrics for s in SHOTS]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def reports_to_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "shot", "n", "mae", "rmse", "bmae"])
    for r in reports:
        for s in SHOTS:
            d = r.by_shot[s]
            w.writerow([r.method, s, r.counts.get(s, 0), repr(d["mae"]), repr(d["rmse"]), repr(d["bmae"])])
    return buf.getvalue()
