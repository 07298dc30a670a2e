"""Compare the compiled and NumPy kernel backends.

    python benchmarks/bench_kernels.py [--batch 4096] [--repeat 20]

Prints the best wall time per call for each kernel and the speedup. Both
backends are checked for agreement before timing.
"""

import argparse
import sys
import timeit

import numpy as np

from hca import _kernels_py as py
from hca.heads import LOG_EPS

try:
    from hca import _kernels as cy
except ImportError:
    cy = None


def make_case(n, fine=100, levels=(2, 4, 8, 16, 32, 64, 100), seed=0):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(fine), size=n)
    starts = np.r_[0, np.sort(rng.choice(np.arange(1, fine), 15, replace=False))].astype(np.int64)
    offsets = np.r_[0, np.cumsum(levels)].astype(np.int64)
    Z = rng.standard_normal((n, offsets[-1]))
    target = np.concatenate([rng.dirichlet(np.ones(c), size=n) for c in levels], axis=1)
    weight = np.ones(n)
    return {
        "segment_sum": (P, starts),
        "segment_max": (P, starts),
        "range_consistent": (P, starts, 1),
        "segment_softmax_ce": (Z, offsets, target, weight, LOG_EPS),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if np.isscalar(a):
        return np.isclose(a, b, rtol=1e-10, atol=1e-12)
    return np.allclose(np.asarray(a), np.asarray(b), rtol=1e-10, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=4096)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled extension not built; only the NumPy backend is available", file=sys.stderr)
        return 1
    case = make_case(args.batch)
    print(f"batch={args.batch}, best of {args.repeat}")
    print(f"{'kernel':<20} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, call_args in case.items():
        f_py, f_cy = getattr(py, name), getattr(cy, name)
        if not _same(f_py(*call_args), f_cy(*call_args)):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        t = {}
        for label, f in (("numpy", f_py), ("cython", f_cy)):
            t[label] = min(timeit.repeat(lambda: f(*call_args), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<20} {t['numpy']:>10.3f} {t['cython']:>10.3f} {t['numpy'] / t['cython']:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
