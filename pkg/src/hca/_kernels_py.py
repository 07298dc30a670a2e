"""NumPy implementations of the segment pooling kernels."""

import numpy as np


def _group_index(starts, n_cols):
    return np.repeat(np.arange(starts.size), np.diff(np.append(starts, n_cols)))


def segment_sum(P, starts):
    return np.add.reduceat(P, starts, axis=1)


def segment_max(P, starts):
    vals = np.maximum.reduceat(P, starts, axis=1)
    group = _group_index(starts, P.shape[1])
    # first column in each group equal to the group max
    hit = P == vals[:, group]
    cols = np.arange(P.shape[1])
    masked = np.where(hit, cols, P.shape[1])
    args = np.minimum.reduceat(masked, starts, axis=1)
    return vals, args.astype(np.int64)


def range_consistent(P, starts, use_max):
    group = _group_index(starts, P.shape[1])
    u = P.argmax(axis=1)
    pooled = np.maximum.reduceat(P, starts, axis=1) if use_max else np.add.reduceat(P, starts, axis=1)
    return pooled.argmax(axis=1) == group[u]


def segment_softmax_ce(Z, offsets, target, weight, log_eps):
    n = Z.shape[0]
    total, dZ = 0.0, np.empty_like(Z)
    for a, b in zip(offsets[:-1], offsets[1:]):
        z = Z[:, a:b]
        s = z - z.max(axis=1, keepdims=True)
        ls = s - np.log(np.exp(s).sum(axis=1, keepdims=True))
        mask = ls > log_eps
        t = target[:, a:b]
        total -= (weight * (t * np.where(mask, ls, log_eps)).sum(axis=1)).sum() / n
        tm = t * mask
        dZ[:, a:b] = weight[:, None] * (np.exp(ls) * tm.sum(axis=1, keepdims=True) - tm) / n
    return float(total), dZ
