#!/usr/bin/env python3
"""Benchmark the compiled rollout kernels against the pure-Python backend.

Times the three rollout kernels on evaluation-sized batches and reports
steps/second plus speedup. The compiled backend exists because candidate
evaluation dominates a profiled training run; this script quantifies what it
buys on the current machine.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from pgprofiler._kernels import pure
from pgprofiler.rng import substream

try:
    from pgprofiler._kernels import _core
except ImportError:
    _core = None


def time_call(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_tabular(mod, batch=400, horizon=100):
    gen = substream(1)
    s, a = 3, 2
    probs = np.full((s, a), 0.5)
    trans = gen.random((s, a, s))
    trans /= trans.sum(axis=2, keepdims=True)
    rewards = gen.random((s, a))
    rho = np.array([1.0, 0.0, 0.0])
    u = gen.random((batch, 1 + 2 * horizon))
    states = np.zeros((batch, horizon + 1), dtype=np.int64)
    actions = np.zeros((batch, horizon), dtype=np.int64)
    rews = np.zeros((batch, horizon))
    lengths = np.zeros(batch, dtype=np.int64)
    return (lambda: mod.tabular_rollouts(probs, trans, rewards, rho, u,
                                         states, actions, rews, lengths),
            batch * horizon)


def bench_cartpole(mod, batch=200, horizon=200):
    gen = substream(2)
    weights = 0.5 * gen.standard_normal((2, 4))
    u = gen.random((batch, 4 + horizon))
    states = np.zeros((batch, horizon + 1, 4))
    actions = np.zeros((batch, horizon), dtype=np.int64)
    rews = np.zeros((batch, horizon))
    lengths = np.zeros(batch, dtype=np.int64)
    terminal = np.zeros(batch, dtype=np.int64)
    return (lambda: mod.cartpole_rollouts(weights, u, states, actions, rews,
                                          lengths, terminal),
            batch * horizon)  # upper bound; episodes may stop early


def bench_reacher(mod, batch=200, horizon=100):
    gen = substream(3)
    weights = 0.4 * gen.standard_normal((2, 4))
    u_reset = gen.random((batch, 2))
    normals = gen.standard_normal((batch, horizon, 2))
    stds = np.array([0.2, 0.2])
    states = np.zeros((batch, horizon + 1, 4))
    actions = np.zeros((batch, horizon, 2))
    rews = np.zeros((batch, horizon))
    lengths = np.zeros(batch, dtype=np.int64)
    return (lambda: mod.reacher_rollouts(weights, stds, True, u_reset,
                                         normals, 0.1, 0.0, 0.0, -1.0, 1.0,
                                         states, actions, rews, lengths),
            batch * horizon)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    benches = [("tabular", bench_tabular), ("cartpole", bench_cartpole),
               ("reacher", bench_reacher)]
    print(f"{'kernel':<10} {'pure steps/s':>14} {'cython steps/s':>16} "
          f"{'speedup':>9}")
    for name, make in benches:
        fn_pure, steps = make(pure)
        t_pure = time_call(fn_pure, args.repeats)
        if _core is None:
            print(f"{name:<10} {steps / t_pure:>14,.0f} "
                  f"{'(not built)':>16} {'-':>9}")
            continue
        fn_core, _ = make(_core)
        t_core = time_call(fn_core, args.repeats)
        print(f"{name:<10} {steps / t_pure:>14,.0f} "
              f"{steps / t_core:>16,.0f} {t_pure / t_core:>8.1f}x")


if __name__ == "__main__":
    main()
