"""Throughput comparison of the two kernel backends.

Runs each hot kernel on realistic shapes against both implementations: the
numba-compiled loop forms and the vectorized numpy forms. Compilation time
is excluded (one warmup call per kernel before timing).

Usage:
    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 128]
"""

import argparse
import timeit

import numpy as np

from mtsedge.kernels import jit_kernels, vector
from mtsedge.evaluation import match_offsets
from mtsedge.seeding import stream


def _cases(size):
    rng = stream(11, "bench")
    x = rng.standard_normal((size, size, 16))
    k33 = rng.standard_normal((16, 16, 3, 3))
    b = rng.standard_normal(16)
    gy = rng.standard_normal((size, size, 16))
    pool_x = rng.standard_normal((size, size, 16))
    edge = (rng.uniform(0, 1, (size, size)) < 0.08).astype(np.uint8)
    gt = (rng.uniform(0, 1, (size, size)) < 0.08).astype(np.uint8)
    dys, dxs = match_offsets(size, size, 0.0075)

    pool_idx = vector.pool_fwd(pool_x, 2, 2)[1]
    gp = rng.standard_normal((size // 2, size // 2, 16))

    return [
        ("conv_fwd 3x3", "conv_fwd", (x, k33, b, 1, 1, 1)),
        ("conv_bwd_x 3x3", "conv_bwd_x", (gy, k33, 1, 1, 1, size, size)),
        ("conv_bwd_k 3x3", "conv_bwd_k", (x, gy, 1, 1, 1, 3, 3)),
        ("pool_fwd 2x2", "pool_fwd", (pool_x, 2, 2)),
        ("pool_bwd 2x2", "pool_bwd", (gp, pool_idx, size, size)),
        ("zhang_suen", "zhang_suen", (edge,)),
        ("greedy_match", "greedy_match", (edge, gt, dys, dxs)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=128)
    args = ap.parse_args()

    jit = jit_kernels()
    rows = []
    for label, name, call_args in _cases(args.size):
        row = {"label": label}
        for impl_name, fn in (("numba", jit[name]), ("numpy", getattr(vector, name))):
            fn(*call_args)  # warmup / compile
            t = min(timeit.repeat(lambda: fn(*call_args),
                                  number=1, repeat=args.repeat))
            row[impl_name] = t
        rows.append(row)

    print(f"{'kernel':<18}{'numba':>12}{'numpy':>12}{'numpy/numba':>14}")
    for r in rows:
        ratio = r["numpy"] / r["numba"] if r["numba"] > 0 else float("inf")
        print(f"{r['label']:<18}{r['numba'] * 1e3:>10.2f}ms"
              f"{r['numpy'] * 1e3:>10.2f}ms{ratio:>13.1f}x")


if __name__ == "__main__":
    main()
