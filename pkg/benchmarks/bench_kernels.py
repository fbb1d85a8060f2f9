#!/usr/bin/env python3
"""Benchmark the Numba kernels against their pure-NumPy fallbacks.

Covers the three hot paths: fused landmark metrics, regression-tree split
search, and batched forest traversal, plus two end-to-end consumers
(alpha calibration and dose inversion).

Usage:
    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --batches 64 512 --output results.json
"""

import argparse
import json
import time

import numpy as np

import facedose.kernels as K
from facedose.faceworld import SyntheticWorld


def timeit(fn, repeats):
    fn()  # warm
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_metrics(world, flat, batches):
    rng = np.random.default_rng(0)
    rows = []
    print("\nFUSED LANDMARK METRICS (batch of faces -> 6 metrics + ipd)")
    print(f"{'batch':>8} {'numba (ms)':>12} {'numpy (ms)':>12} {'speedup':>9}")
    for b in batches:
        pts = world.decode_points_batch(rng.normal(0, 0.2, size=(b, world.latent_size)))
        repeats = max(3, 200 // b)
        t_numba = timeit(lambda: K._metrics_batch_numba(pts, *flat), repeats) * 1e3 \
            if K.NUMBA_ENABLED else float("inf")

        def numpy_path():
            out = np.empty((b, 7))
            for i in range(b):
                out[i] = _metrics_numpy_one(pts[i], world.table)
            return out

        t_numpy = timeit(numpy_path, max(1, repeats // 4)) * 1e3
        speedup = t_numpy / t_numba if t_numba > 0 else 0.0
        print(f"{b:>8} {t_numba:>12.3f} {t_numpy:>12.3f} {speedup:>8.1f}x")
        rows.append({"batch": b, "numba_ms": t_numba, "numpy_ms": t_numpy,
                     "speedup": speedup})
    return rows


def _metrics_numpy_one(pts, table):
    from facedose.geometry import CANONICAL_SIZE, LandmarkSet, align, metric_array

    lm = LandmarkSet(np.clip(pts, 0, CANONICAL_SIZE), (CANONICAL_SIZE, CANONICAL_SIZE))
    canonical = align(lm, table)
    out = np.empty(7)
    out[:6] = metric_array(canonical, table)
    out[6] = canonical.ipd
    return out


def bench_split(sizes):
    rng = np.random.default_rng(1)
    rows = []
    print("\nTREE SPLIT SEARCH (n samples x 28 features)")
    print(f"{'n':>8} {'numba (ms)':>12} {'numpy (ms)':>12} {'speedup':>9}")
    for n in sizes:
        x = rng.normal(size=(n, 28))
        g = rng.normal(size=n)
        t_numba = timeit(lambda: K._best_split_numba(x, g, 2), 50) * 1e3 \
            if K.NUMBA_ENABLED else float("inf")
        t_numpy = timeit(lambda: K._best_split_numpy(x, g, 2), 50) * 1e3
        speedup = t_numpy / t_numba if t_numba > 0 else 0.0
        print(f"{n:>8} {t_numba:>12.3f} {t_numpy:>12.3f} {speedup:>8.1f}x")
        rows.append({"n": n, "numba_ms": t_numba, "numpy_ms": t_numpy, "speedup": speedup})
    return rows


def bench_forest(batches):
    from facedose.gbm import GbmConfig, train

    rng = np.random.default_rng(2)
    x = rng.normal(size=(148, 28))
    y = rng.normal(size=(148, 6))
    model = train(x, y, GbmConfig())
    rows = []
    print("\nFOREST PREDICTION (1200 trees, depth <= 3)")
    print(f"{'batch':>8} {'numba (ms)':>12} {'numpy (ms)':>12} {'speedup':>9}")
    for b in batches:
        probes = np.ascontiguousarray(rng.normal(size=(b, 28)))
        args = (probes, model.feature, model.threshold, model.left, model.right,
                model.value, model.roots, model.targets, model.config.learning_rate,
                model.base)
        t_numba = timeit(lambda: K._forest_predict_numba(*args), 20) * 1e3 \
            if K.NUMBA_ENABLED else float("inf")
        t_numpy = timeit(lambda: K._forest_predict_numpy(*args), 5) * 1e3
        speedup = t_numpy / t_numba if t_numba > 0 else 0.0
        print(f"{b:>8} {t_numba:>12.3f} {t_numpy:>12.3f} {speedup:>8.1f}x")
        rows.append({"batch": b, "numba_ms": t_numba, "numpy_ms": t_numpy,
                     "speedup": speedup})
    return rows


def main():
    parser = argparse.ArgumentParser(description="facedose kernel benchmarks")
    parser.add_argument("--batches", type=int, nargs="+", default=[16, 128, 1024])
    parser.add_argument("--split-sizes", type=int, nargs="+", default=[50, 150, 400])
    parser.add_argument("--output", type=str, default=None)
    args = parser.parse_args()

    print("=" * 60)
    print("FACEDOSE KERNEL BENCHMARKS")
    print(f"numba backend enabled: {K.NUMBA_ENABLED} "
          f"(set FACEDOSE_NUMBA=0 to force the NumPy path)")
    print("=" * 60)

    world = SyntheticWorld.create(seed=0)
    flat = world.table.flat()
    K.warmup(flat)

    results = {
        "numba_enabled": K.NUMBA_ENABLED,
        "metrics": bench_metrics(world, flat, args.batches),
        "split": bench_split(args.split_sizes),
        "forest": bench_forest(args.batches),
    }

    if args.output:
        with open(args.output, "w") as fh:
            json.dump(results, fh, indent=1)
        print(f"\nresults saved to {args.output}")


if __name__ == "__main__":
    main()
