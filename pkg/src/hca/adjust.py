"""Learning-free combination of hierarchical predictions and decoding."""

import numpy as np

from .quantize import class_to_value

EPS = 1e-12


def _check(probs, transitions):
    if len(probs) != len(transitions) + 1:
        raise ValueError(f"{len(probs)} prediction levels but {len(transitions)} transitions")
    fine = np.asarray(probs[-1], dtype=np.float64)
    for p, T in zip(probs[:-1], transitions):
        p = np.asarray(p)
        if T.shape[1] != fine.shape[-1] or T.shape[0] != p.shape[-1]:
            raise ValueError(f"transition {T.shape} does not fit {p.shape[-1]} -> {fine.shape[-1]}")
    return fine


def hca_add(probs, transitions):
    """Finest probabilities plus every coarse level broadcast onto its fine classes.

    ``probs`` runs coarsest to finest; each entry is ``(C_h,)`` or ``(n, C_h)``.
    """
    out = _check(probs, transitions).copy()
    for p, T in zip(probs[:-1], transitions):
        out += np.asarray(p) @ T
    return out


def hca_mul(probs, transitions, eps=EPS):
    """Sum of clamped log-probabilities across levels (a product in probability space)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    out = np.log(np.maximum(_check(probs, transitions), eps))
    for p, T in zip(probs[:-1], transitions):
        out = out + np.log(np.maximum(np.asarray(p, dtype=np.float64), eps)) @ T
    return out


def average_ensemble(probs, transitions):
    """Average of all levels after spreading each coarse mass evenly over its fine classes."""
    fine = _check(probs, transitions)
    out = fine.copy()
    for p, T in zip(probs[:-1], transitions):
        sizes = T.sum(axis=1)
        out += (np.asarray(p) / sizes) @ T
    return out / len(probs)


def coarse_to_fine(coarse, fine, T):
    """Pick the best fine class inside the coarse argmax range."""
    coarse, fine = np.atleast_2d(coarse), np.atleast_2d(fine)
    allowed = T[coarse.argmax(axis=1)] > 0
    return np.where(allowed, fine, -np.inf).argmax(axis=1)


def decode(scores, hierarchy, h=None):
    """Argmax (lowest index on ties) mapped to the level's representative value."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[-1] == 0:
        raise ValueError("empty score vector")
    h = hierarchy.H if h is None else h
    return class_to_value(scores.argmax(axis=-1), hierarchy, h)
