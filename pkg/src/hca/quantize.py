"""Quantization of a continuous target range into nested class hierarchies.

Class indices are 0-based throughout. Intervals are left-open and
right-closed, ``(edges[c], edges[c + 1]]``, except that the lowest edge
belongs to class 0 so every value in ``[V_min, V_max]`` has a class.
"""

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

SCHEMES = ("linear", "log", "equal-count")
MODES = ("equal-count", "equal-length")


class QuantizationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BinEdges:
    edges: np.ndarray
    scheme: str = "linear"

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64)
        if edges.ndim != 1 or edges.size < 2:
            raise ValueError("need at least two edges")
        if not np.all(np.diff(edges) > 0):
            raise ValueError("edges must be strictly increasing")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def n_classes(self):
        return self.edges.size - 1

    @property
    def vmin(self):
        return float(self.edges[0])

    @property
    def vmax(self):
        return float(self.edges[-1])

    def widths(self):
        return np.diff(self.edges)


@dataclass(frozen=True)
class Level:
    """One classifier level: its edges, fine->coarse map and decoded values."""

    edges: np.ndarray
    group_of: np.ndarray
    representatives: np.ndarray
    counts: np.ndarray

    @property
    def n_classes(self):
        return self.edges.size - 1


@dataclass(frozen=True)
class Hierarchy:
    levels: tuple
    mode: str = "equal-count"
    notes: tuple = field(default=())

    @property
    def H(self):
        return len(self.levels)

    @property
    def finest(self):
        return self.levels[-1]

    @property
    def class_counts(self):
        return [lv.n_classes for lv in self.levels]

    def level(self, h):
        """Return level ``h`` (1-based, as in the hierarchy depth)."""
        if not 1 <= h <= self.H:
            raise IndexError(f"level {h} outside 1..{self.H}")
        return self.levels[h - 1]

    def group_of(self, h):
        return self.level(h).group_of

    def representatives(self, h):
        return self.level(h).representatives

    def edges(self, h):
        return BinEdges(self.level(h).edges)

    def transitions(self):
        """Transition matrices for levels 1..H-1, coarse to finest."""
        return [transition_matrix(self, h) for h in range(1, self.H)]

    def to_dict(self):
        return {
            "mode": self.mode,
            "notes": list(self.notes),
            "levels": [
                {
                    "n_classes": lv.n_classes,
                    "edges": lv.edges.tolist(),
                    "group_of": lv.group_of.tolist(),
                    "representatives": lv.representatives.tolist(),
                    "counts": lv.counts.tolist(),
                }
                for lv in self.levels
            ],
        }

    @classmethod
    def from_dict(cls, d):
        levels = []
        for item in d["levels"]:
            levels.append(_make_level(
                np.asarray(item["edges"], dtype=np.float64),
                np.asarray(item["group_of"], dtype=np.int64),
                np.asarray(item["representatives"], dtype=np.float64),
                np.asarray(item["counts"], dtype=np.int64),
            ))
        hier = cls(tuple(levels), d.get("mode", "equal-count"), tuple(d.get("notes", ())))
        validate_hierarchy(hier)
        return hier

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


def _make_level(edges, group_of, reps, counts):
    for a in (edges, group_of, reps, counts):
        a.setflags(write=False)
    return Level(edges, group_of, reps, counts)


def build_finest_bins(train_values, scheme="linear", n_classes=100, log_offset=0.0):
    """Build the finest bin edges over the training target range.

    For ``equal-count`` the interior edges are sample quantiles (linear
    interpolation); duplicate quantiles collapse and the class count drops
    with a :class:`QuantizationWarning`.
    """
    v = np.asarray(train_values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("train_values is empty")
    if np.isnan(v).any():
        raise ValueError("train_values contains NaN")
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        raise ValueError("train_values span a single point")

    if scheme == "linear":
        edges = np.linspace(lo, hi, n_classes + 1)
    elif scheme == "log":
        if lo + log_offset <= 0:
            raise ValueError("log scheme needs positive values (set log_offset)")
        edges = np.geomspace(lo + log_offset, hi + log_offset, n_classes + 1) - log_offset
        edges[0], edges[-1] = lo, hi
    else:
        edges = np.quantile(v, np.linspace(0.0, 1.0, n_classes + 1))
        edges[0], edges[-1] = lo, hi
        edges = np.unique(edges)
        if edges.size - 1 < n_classes:
            warnings.warn(
                f"equal-count binning collapsed {n_classes} classes to {edges.size - 1}",
                QuantizationWarning, stacklevel=2)
    return BinEdges(edges, scheme)


def value_to_class(v, edges, return_clamped=False):
    """Map value(s) to 0-based class indices, clamping outside the range."""
    e = edges.edges if isinstance(edges, BinEdges) else np.asarray(edges, dtype=np.float64)
    arr = np.asarray(v, dtype=np.float64)
    if np.isnan(arr).any():
        raise ValueError("cannot classify NaN")
    n = e.size - 1
    idx = np.searchsorted(e, arr, side="left") - 1
    clamped = (arr < e[0]) | (arr > e[-1])
    idx = np.clip(idx, 0, n - 1)
    if arr.ndim == 0:
        idx, clamped = int(idx), bool(clamped)
    if return_clamped:
        return idx, clamped
    return idx


def class_to_value(c, hierarchy, h):
    reps = hierarchy.representatives(h)
    c = np.asarray(c)
    if np.any(c < 0) or np.any(c >= reps.size):
        raise IndexError(f"class index out of range for level {h}")
    out = reps[c]
    return float(out) if out.ndim == 0 else out


def _pick_edges(interior, targets):
    # ties go to the lower edge: argmin returns the first minimum
    picks = []
    for t in targets:
        picks.append(int(np.argmin(np.abs(interior - t))))
    return picks


def _level_from_boundaries(fine_edges, boundary_idx, train_values):
    """Build a level from indices into ``fine_edges`` (interior only)."""
    cut = np.concatenate(([0], np.asarray(boundary_idx, dtype=np.int64), [fine_edges.size - 1]))
    edges = fine_edges[cut]
    n_fine = fine_edges.size - 1
    group_of = np.searchsorted(cut, np.arange(n_fine), side="right") - 1
    cls = value_to_class(train_values, edges)
    n = edges.size - 1
    counts = np.bincount(cls, minlength=n)
    sums = np.bincount(cls, weights=train_values, minlength=n)
    mids = 0.5 * (edges[:-1] + edges[1:])
    with np.errstate(invalid="ignore", divide="ignore"):
        reps = np.where(counts > 0, sums / np.maximum(counts, 1), mids)
    # guard representatives against rounding outside their bin
    reps = np.clip(reps, edges[:-1], edges[1:])
    return _make_level(edges.copy(), group_of.astype(np.int64), reps, counts.astype(np.int64))


def max_levels(n_fine):
    """Largest hierarchy depth whose coarse levels stay strictly coarser."""
    return max(1, math.ceil(math.log2(n_fine)))


def build_hierarchy(finest, train_values, H=7, mode="equal-count"):
    """Derive coarse levels 1..H-1 (``2**h`` classes) from the finest bins.

    Coarse boundaries are always a subset of the finest edges: the finest
    edge closest to each sample quantile (``equal-count``) or to each
    equal-length split point (``equal-length``).
    """
    if H < 2:
        raise ValueError("H must be at least 2")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    v = np.asarray(train_values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("train_values is empty")
    fine_edges = finest.edges
    n_fine = finest.n_classes
    notes = []
    h_max = max_levels(n_fine)
    if H > h_max:
        notes.append(f"H reduced from {H} to {h_max} for {n_fine} finest classes")
        warnings.warn(notes[-1], QuantizationWarning, stacklevel=2)
        H = h_max

    interior = fine_edges[1:-1]
    levels = []
    for h in range(1, H):
        k = 2 ** h
        if mode == "equal-count":
            targets = np.quantile(v, np.arange(1, k) / k)
        else:
            targets = finest.vmin + (finest.vmax - finest.vmin) * np.arange(1, k) / k
        picks = _pick_edges(interior, targets)
        uniq = sorted(set(picks))
        if len(uniq) < k - 1:
            notes.append(f"level {h}: merged {k - 1 - len(uniq)} duplicate boundaries")
        # interior index i corresponds to fine edge i + 1
        levels.append(_level_from_boundaries(fine_edges, [i + 1 for i in uniq], v))
    levels.append(_level_from_boundaries(fine_edges, list(range(1, n_fine)), v))
    hier = Hierarchy(tuple(levels), mode, tuple(notes))
    validate_hierarchy(hier)
    return hier


def hierarchy_from_groups(finest_edges, boundaries_per_level, train_values=None):
    """Hierarchy from explicit fine-edge boundary indices per coarse level.

    ``boundaries_per_level[i]`` lists interior fine-edge indices (1..C_H-1)
    that split level ``i + 1``. Without training values, representatives
    fall back to bin midpoints.
    """
    e = finest_edges.edges if isinstance(finest_edges, BinEdges) else np.asarray(finest_edges, float)
    v = np.empty(0) if train_values is None else np.asarray(train_values, dtype=np.float64)
    levels = [_level_from_boundaries(e, sorted(set(b)), v) for b in boundaries_per_level]
    levels.append(_level_from_boundaries(e, list(range(1, e.size - 1)), v))
    hier = Hierarchy(tuple(levels), "explicit")
    validate_hierarchy(hier, strict_sizes=False)
    return hier


def transition_matrix(hierarchy, h):
    """Binary ``C_h x C_H`` matrix with ``T[v, u] = 1`` iff fine class u is in coarse class v."""
    if not 1 <= h < hierarchy.H:
        raise IndexError(f"transition level {h} outside 1..{hierarchy.H - 1}")
    g = hierarchy.group_of(h)
    T = np.zeros((hierarchy.level(h).n_classes, g.size), dtype=np.float64)
    T[g, np.arange(g.size)] = 1.0
    return T


def validate_hierarchy(hier, strict_sizes=True):
    fine = hier.finest
    n_fine = fine.n_classes
    if not np.array_equal(fine.group_of, np.arange(n_fine)):
        raise ValueError("finest level must map to itself")
    for h, lv in enumerate(hier.levels, start=1):
        g = lv.group_of
        if g.size != n_fine:
            raise ValueError(f"level {h}: group_of has wrong length")
        if g[0] != 0 or np.any(np.diff(g) < 0) or np.any(np.diff(g) > 1) or g[-1] != lv.n_classes - 1:
            raise ValueError(f"level {h}: group_of must be monotone and surjective")
        if not np.all(np.isin(lv.edges, fine.edges)):
            raise ValueError(f"level {h}: edges are not a subset of the finest edges")
        if np.any(lv.representatives < lv.edges[:-1]) or np.any(lv.representatives > lv.edges[1:]):
            raise ValueError(f"level {h}: representative outside its bin")
        if strict_sizes and h < hier.H and lv.n_classes >= n_fine:
            raise ValueError(f"level {h}: not coarser than the finest level")
