"""Per-level classification targets and LDS sample weights."""

import numpy as np

from .quantize import value_to_class


def one_hot(v, hierarchy, h):
    """One-hot label(s) for value(s) ``v`` at level ``h``; rows sum to 1."""
    lv = hierarchy.level(h)
    c = np.atleast_1d(value_to_class(v, lv.edges))
    out = np.zeros((c.size, lv.n_classes))
    out[np.arange(c.size), c] = 1.0
    return out[0] if np.ndim(v) == 0 else out


def default_sigma(hierarchy):
    """Half the median finest-bin width."""
    return 0.5 * float(np.median(np.diff(hierarchy.finest.edges)))


def sord_soft(v, hierarchy, h, sigma):
    """Gaussian-smoothed ordinal label over the level-``h`` representatives.

    ``probs[j]`` is proportional to ``exp(-(v - r_j)**2 / (2 sigma**2))``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    reps = hierarchy.representatives(h)
    x = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if np.isnan(x).any():
        raise ValueError("cannot label NaN")
    logits = -((x[:, None] - reps[None, :]) ** 2) / (2.0 * sigma ** 2)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if np.ndim(v) == 0 else p


def level_targets(values, hierarchy, mode="soft", sigma=None):
    """Targets for every level 1..H as a list of ``(n, C_h)`` arrays."""
    if mode not in ("soft", "hard"):
        raise ValueError(f"unknown label mode {mode!r}")
    values = np.asarray(values, dtype=np.float64)
    if mode == "hard":
        return [one_hot(values, hierarchy, h) for h in range(1, hierarchy.H + 1)]
    sigma = default_sigma(hierarchy) if sigma is None else sigma
    return [sord_soft(values, hierarchy, h, sigma) for h in range(1, hierarchy.H + 1)]


def gaussian_kernel(half_width=2, sigma=1.0):
    x = np.arange(-half_width, half_width + 1, dtype=np.float64)
    k = np.exp(-x ** 2 / (2.0 * sigma ** 2))
    return k / k.sum()


def lds_weights(train_values, hierarchy, kernel_half_width=2, sigma=1.0):
    """Inverse smoothed-frequency weights over finest classes, mean 1.

    ``kernel_half_width=0`` disables smoothing. The class-count sequence is
    zero-padded at both ends before convolution.
    """
    v = np.asarray(train_values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("train_values is empty")
    fine = hierarchy.finest
    cls = value_to_class(v, fine.edges)
    counts = np.bincount(np.atleast_1d(cls), minlength=fine.n_classes).astype(np.float64)
    if kernel_half_width > 0:
        smoothed = np.convolve(counts, gaussian_kernel(kernel_half_width, sigma), mode="same")
    else:
        smoothed = counts
    per_sample = smoothed[cls]
    assert np.all(per_sample > 0), "smoothed density vanished at a populated class"
    w = 1.0 / per_sample
    return w / w.mean()
