"""Time the numba kernels against their numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

The workloads mirror the two hot loops: batch Hellinger statistics over
scenario trials, and the KL minimisation inside the exponent grid search.
"""

from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from zmsdetect import kernels


def _workloads(rng):
    counts = rng.multinomial(600, np.full(128, 1 / 128), size=(10_000, 8)).astype(np.int64)
    q = np.linspace(1e-3, 1 - 1e-3, 400)
    r = np.linspace(1e-4, 1 - 1e-4, 4000)
    lr, l1r = np.log2(r), np.log2(1 - r)
    q1, q2 = np.meshgrid(q, q, indexing="ij")
    q1, q2 = q1.ravel(), q2.ravel()
    return {
        "sqrt_ticks (10k x 8 x 128)": ("sqrt_ticks", (counts, 600, 13)),
        "quantized_sum_squares (10k x 8 x 128)": ("quantized_sum_squares", (counts, 600, 13)),
        "kl_min (160k points x 4k candidates)": ("kl_min_over_candidates", (q1, q2, lr, l1r, lr[::-1], l1r[::-1])),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write timings here")
    args = ap.parse_args(argv)
    if kernels.numba_impl is None:
        print("numba is not importable; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    rows = []
    for label, (name, fargs) in _workloads(rng).items():
        f_np = getattr(kernels.numpy_impl, name)
        f_nb = getattr(kernels.numba_impl, name)
        same = np.array_equal(np.asarray(f_np(*fargs)), np.asarray(f_nb(*fargs)))  # also warms the JIT
        if not same:
            same = bool(np.allclose(f_np(*fargs), f_nb(*fargs), rtol=1e-12, atol=1e-12))
        t_np = min(timeit.repeat(lambda: f_np(*fargs), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: f_nb(*fargs), number=1, repeat=args.repeat))
        rows.append({"kernel": label, "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb,
                     "outputs_agree": bool(same)})
    width = max(len(r["kernel"]) for r in rows)
    print(f"{'kernel':<{width}}  {'numpy s':>9}  {'numba s':>9}  {'speedup':>7}  agree")
    for r in rows:
        print(f"{r['kernel']:<{width}}  {r['numpy_s']:9.4f}  {r['numba_s']:9.4f}  "
              f"{r['speedup']:7.1f}  {r['outputs_agree']}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
