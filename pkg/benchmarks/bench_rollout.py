"""Compare the compiled and numpy rollout kernels on estimator-sized batches.

    python benchmarks/bench_rollout.py [--repeats 5]
"""
import argparse
import time

import numpy as np

from robust_pmdpd import _rollout_py, kernels
from robust_pmdpd.instances import random_rcmdp
from robust_pmdpd.model import SoftmaxPolicy, stack_costs
from robust_pmdpd.sampling import build_cdf

CASES = [
    # (S, A, rollouts, horizon)
    (5, 3, 20_000, 10),
    (10, 4, 50_000, 20),
    (20, 4, 100_000, 30),
]


def _inputs(S, A, n, H, seed=0):
    spec = random_rcmdp(S, A, 1, 0.9, seed)
    rng = np.random.default_rng(seed)
    pol = SoftmaxPolicy(rng.normal(size=(S, A)))
    s0 = rng.integers(0, S, n).astype(np.int64)
    neg = np.full(n, -1, dtype=np.int64)
    cost = stack_costs(spec)
    return (s0, neg, neg, H, build_cdf(pol.probs), build_cdf(spec.nominal), cost, cost, spec.gamma,
            rng.random((n, H, 2)))


def _best(fn, args, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    if kernels.BACKEND != "cython":
        print("compiled kernel unavailable; only the numpy timing is meaningful")
    print(f"{'S':>3} {'A':>2} {'rollouts':>9} {'H':>3} {'numpy s':>9} {'cython s':>9} {'speedup':>8} {'identical':>9}")
    for S, A, n, H in CASES:
        inp = _inputs(S, A, n, H)
        t_np, r_np = _best(_rollout_py.rollout_returns, inp, args.repeats)
        t_cy, r_cy = _best(kernels.rollout_returns, inp, args.repeats)
        same = bool(np.array_equal(r_np, r_cy))
        print(f"{S:>3} {A:>2} {n:>9} {H:>3} {t_np:>9.4f} {t_cy:>9.4f} {t_np / t_cy:>8.1f} {str(same):>9}")


if __name__ == "__main__":
    main()
