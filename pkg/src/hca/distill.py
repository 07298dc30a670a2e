"""Range-preserving distillation of a frozen hierarchy into a single head.

Alignments pool the distilled head's fine distribution down to each coarse
level: ``sum`` adds the probabilities of a group, ``max`` keeps each
group's largest probability and renormalizes. Only ``max`` guarantees that
the fine argmax stays inside the coarse argmax range.
"""

import math

import numpy as np

from . import kernels
from .heads import EPS, TrainConfig, TwoLayerHead, fit, softmax

ALIGNMENTS = ("sum", "max")


def _starts(T):
    T = np.asarray(T)
    if T.ndim != 2 or not np.all(T.sum(axis=0) == 1):
        raise ValueError("transition matrix columns must each contain exactly one 1")
    g = T.argmax(axis=0)
    if np.any(np.diff(g) < 0) or np.any(np.diff(g) > 1) or g[0] != 0 or g[-1] != T.shape[0] - 1:
        raise ValueError("transition groups must be contiguous and ordered")
    return kernels.group_starts(g)


class Groups:
    """Contiguous fine-class groups of one transition matrix."""

    def __init__(self, T):
        self.T = np.asarray(T, dtype=np.float64)
        self.starts = _starts(self.T)
        self.group_of = self.T.argmax(axis=0)
        self.n_coarse, self.n_fine = self.T.shape


def as_groups(T):
    return T if isinstance(T, Groups) else Groups(T)


def sum_pool(pT, T):
    g = as_groups(T)
    p = np.asarray(pT, dtype=np.float64)
    if p.shape[-1] != g.n_fine:
        raise ValueError(f"vector length {p.shape[-1]} does not match {g.n_fine} fine classes")
    out = kernels.segment_sum(p, g.starts)
    return out[0] if p.ndim == 1 else out


def max_pool(pT, T):
    """Group maxima and the fine index attaining each (before normalization)."""
    g = as_groups(T)
    p = np.asarray(pT, dtype=np.float64)
    if p.shape[-1] != g.n_fine:
        raise ValueError(f"vector length {p.shape[-1]} does not match {g.n_fine} fine classes")
    vals, args = kernels.segment_max(p, g.starts)
    if p.ndim == 1:
        return vals[0], args[0]
    return vals, args


def max_pool_norm(pT, T):
    vals, _ = max_pool(pT, T)
    total = vals.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("max pooling of an all-zero vector")
    return vals / total


def align(pT, T, alignment):
    if alignment == "sum":
        return sum_pool(pT, T)
    if alignment == "max":
        return max_pool_norm(pT, T)
    raise ValueError(f"unknown alignment {alignment!r}")


def kl_div(teacher, student):
    """KL(teacher || student) with both logs clamped at EPS; per row for batches."""
    t = np.asarray(teacher, dtype=np.float64)
    s = np.asarray(student, dtype=np.float64)
    if t.shape != s.shape:
        raise ValueError(f"shape mismatch {t.shape} vs {s.shape}")
    out = (t * (np.log(np.maximum(t, EPS)) - np.log(np.maximum(s, EPS)))).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def hd_loss(pT, teachers, transitions, alignment="max"):
    """Sum over levels of KL(teacher_h || aligned student); level H compares directly."""
    if len(teachers) != len(transitions) + 1:
        raise ValueError(f"{len(teachers)} teachers but {len(transitions)} transitions")
    total = kl_div(teachers[-1], pT)
    for t, T in zip(teachers[:-1], transitions):
        total = total + kl_div(t, align(pT, T, alignment))
    return total


def _kl_student_grad(t, s):
    # d/ds of sum t*(log t - log max(s, EPS)); clamped entries get no gradient
    return np.where(s > EPS, -t / np.maximum(s, EPS), 0.0)


def hd_from_logits(Z, teachers, groups, alignment="max", weight=None):
    """Mean hierarchical KL over a batch and its gradient w.r.t. the logits.

    ``teachers`` is coarsest-first with the finest last; ``groups`` holds
    one :class:`Groups` (or transition matrix) per coarse level. Teachers
    are constants: no gradient reaches them.
    """
    if alignment not in ALIGNMENTS:
        raise ValueError(f"unknown alignment {alignment!r}")
    groups = [as_groups(g) for g in groups]
    n = Z.shape[0]
    w = np.ones(n) if weight is None else np.broadcast_to(np.asarray(weight, float), (n,))
    p = softmax(Z)
    t_fine = teachers[-1]
    per = kl_div(t_fine, p)
    dp = _kl_student_grad(t_fine, p)
    rows = np.arange(n)[:, None]
    for t, g in zip(teachers[:-1], groups):
        if alignment == "sum":
            s = kernels.segment_sum(p, g.starts)
            per = per + kl_div(t, s)
            dp += _kl_student_grad(t, s)[:, g.group_of]
        else:
            m, arg = kernels.segment_max(p, g.starts)
            M = m.sum(axis=1, keepdims=True)
            s = m / M
            per = per + kl_div(t, s)
            ds = _kl_student_grad(t, s)
            dm = (ds - (ds * s).sum(axis=1, keepdims=True)) / M
            # each group's gradient lands on its (first) argmax entry only
            np.add.at(dp, (np.broadcast_to(rows, arg.shape), arg), dm)
    loss = float((w * per).sum() / n)
    dp *= (w / n)[:, None]
    dZ = p * (dp - (dp * p).sum(axis=1, keepdims=True))
    return loss, dZ


def check_range_preserving(pT, transitions, alignment="max"):
    """True iff the fine argmax lies inside the aligned argmax group at every level.

    Works on one vector or a batch (returning a boolean per row). For the
    max alignment the unnormalized group maxima are compared; dividing by
    a common positive total cannot change the argmax, and skipping it
    avoids rounding ties.
    """
    if alignment not in ALIGNMENTS:
        raise ValueError(f"unknown alignment {alignment!r}")
    p = np.asarray(pT, dtype=np.float64)
    ok = np.ones(np.atleast_2d(p).shape[0], dtype=bool)
    for T in transitions:
        ok &= kernels.range_consistent(p, as_groups(T).starts, alignment == "max")
    return bool(ok[0]) if p.ndim == 1 else ok


def teacher_outputs(heads, F):
    """Cached probabilities of the frozen stage-1 heads, coarsest first."""
    return [softmax(h.logits(F)) for h in heads]


def train_stage2(teachers, F, hierarchy, config=None, alignment="max", stage1_epochs=None,
                 fraction=0.2, early_stop=(10, 1e-4), hidden=None, weight=None):
    """Fit a two-layer softplus head to the frozen teachers with the hierarchical KL.

    The epoch budget is ``fraction`` of ``stage1_epochs`` (at least one),
    unless ``stage1_epochs`` is None, in which case ``config.epochs`` is used.
    """
    cfg = config or TrainConfig()
    F = np.asarray(F, dtype=np.float64)
    teachers = [np.array(t, dtype=np.float64) for t in teachers]
    for t in teachers:
        t.setflags(write=False)
    if len(teachers) != hierarchy.H:
        raise ValueError(f"need {hierarchy.H} teacher levels, got {len(teachers)}")
    groups = [Groups(T) for T in hierarchy.transitions()]
    epochs = cfg.epochs if stage1_epochs is None else max(1, math.ceil(fraction * stage1_epochs))
    rng = np.random.default_rng(cfg.seed + 7919)
    head = TwoLayerHead(F.shape[1], hierarchy.finest.n_classes, level=hierarchy.H, rng=rng,
                        hidden=hidden)
    w = None if weight is None else np.asarray(weight, dtype=np.float64)

    def loss_fn(Z, idx):
        return hd_from_logits(Z, [t[idx] for t in teachers], groups, alignment,
                              None if w is None else w[idx])

    curve = fit([head], F, [loss_fn], cfg, rng, epochs=epochs, early_stop=early_stop)
    head.tag = f"hca-d-{alignment}"
    return head, {"loss": curve, "epochs_run": len(curve), "epoch_budget": epochs}
