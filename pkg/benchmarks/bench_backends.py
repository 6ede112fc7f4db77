#!/usr/bin/env python3
"""Time the hot kernels on the numba and numpy backends and check they agree.

    python benchmarks/bench_backends.py [--repeat N] [--quick]

Prints one row per kernel: median wall time per call on each backend, the
speedup of numba over numpy and the largest absolute difference between the
two outputs. The first numba call (JIT compilation or cache load) is excluded.
"""
import argparse
import statistics
import time

import numpy as np

from visubcat import available_backends, set_backend
from visubcat.kernels import correlate, hog_features, nearest_center, smo_solve


def _hog_case(rng, quick):
    img = rng.random((120, 160) if quick else (480, 640))
    return (lambda: hog_features(img, 8)), lambda out: out


def _correlate_case(rng, quick):
    feat = rng.standard_normal((40, 60, 31) if quick else (80, 120, 31))
    tmpl = rng.standard_normal((6, 6, 31))
    return (lambda: correlate(feat, tmpl)), lambda out: out


def _fine_correlate_case(rng, quick):
    feat = rng.standard_normal((80, 120, 31) if quick else (160, 240, 31))
    tmpl = rng.standard_normal((12, 12, 31))
    return (lambda: correlate(feat, tmpl, offset=1, stride=2)), lambda out: out


def _smo_case(rng, quick):
    n, d = (400, 300) if quick else (1500, 1200)
    X = np.vstack([rng.standard_normal((n // 10, d)) + 0.3, rng.standard_normal((n - n // 10, d))])
    y = np.concatenate([np.ones(n // 10), -np.ones(n - n // 10)])
    K = X @ X.T

    def run():
        alpha = np.zeros(n)
        G = -np.ones(n)
        smo_solve(K, y, 0.01, alpha, G, 1e-3, 10_000_000)
        return alpha

    return run, lambda out: out


def _kmeans_case(rng, quick):
    X = rng.standard_normal((2000, 400) if quick else (10000, 1000))
    centers = X[:15].copy()
    return (lambda: nearest_center(X, centers)), lambda out: out[1]


CASES = [
    ("hog", _hog_case),
    ("correlate", _correlate_case),
    ("correlate_fine", _fine_correlate_case),
    ("smo_solve", _smo_case),
    ("nearest_center", _kmeans_case),
]


def _time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="small inputs, for smoke tests")
    args = ap.parse_args(argv)
    backends = available_backends()
    if "numba" not in backends:
        print("numba unavailable: timing the numpy path only")
    print(f"{'kernel':<16}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}{'max |diff|':>12}")
    rows = []
    for name, make in CASES:
        fn, pick = make(np.random.default_rng(0), args.quick)
        res, outs = {}, {}
        for b in backends:
            set_backend(b)
            outs[b] = np.asarray(pick(fn()))      # warm-up, also the output compared
            res[b] = _time(fn, args.repeat)
        diff = float(np.max(np.abs(outs["numba"] - outs["numpy"]))) if len(outs) == 2 else float("nan")
        nb = res.get("numba", float("nan"))
        speed = res["numpy"] / nb if nb == nb else float("nan")
        print(f"{name:<16}{nb * 1e3:>10.2f}{res['numpy'] * 1e3:>10.2f}{speed:>8.1f}x{diff:>12.2e}")
        rows.append((name, nb, res["numpy"], diff))
    set_backend(backends[0])
    return rows


if __name__ == "__main__":
    main()
