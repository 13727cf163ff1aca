#!/usr/bin/env python3
"""Time the compiled and pure-Python RK4 kernels on the benchmark network.

Usage::

    python benchmarks/bench_kernels.py [--steps 2000] [--repeat 3] [--case sim1]

Both backends integrate the same data; the script reports wall times, the
speedup and the largest difference between their trajectories.
"""

import argparse
import time

import numpy as np

from hinfnet import kernels
from hinfnet.filter_design import recover_design
from hinfnet.network import chua_benchmark
from hinfnet.riccati import BOUND_TOL, PD_TOL
from hinfnet.simulator import network_data
from hinfnet.synthesis import DesignOptions, optimize_design


def network_inputs(case, steps, seed=0):
    bench = chua_benchmark(case)
    _, rep = optimize_design(bench.model, bench.weights, DesignOptions(zbar_min=bench.zbar_min))
    design = recover_design(rep, bench.model, bench.weights)
    model = bench.model
    Mx, Kx, H, S, Q0, li, lj, Nl = network_data(model, design, True)
    rng = np.random.default_rng(seed)
    Bw = 0.1 * rng.standard_normal((2 * steps + 1, model.n))
    u = 0.1 * rng.standard_normal((2 * steps + 1, model.N, model.n))
    x0 = rng.standard_normal(model.n)
    xh0 = x0 + rng.standard_normal((model.N, model.n))
    return (model.plant.A, Bw, Mx, Kx, H, S, li, lj, Nl, u, x0, xh0, Q0), (model.plant.A, H[0],
                                                                         S[0], Q0[0])


def best_time(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--case", choices=("sim1", "sim2"), default="sim1")
    p.add_argument("--dt", type=float, default=5e-4)
    args = p.parse_args(argv)
    if kernels.BACKEND != "compiled":
        raise SystemExit("compiled kernels are not built; run `pip install -e .` first")

    net, dre = network_inputs(args.case, args.steps)
    rows = []
    for name, call in (
        ("rk4_network", lambda impl: kernels.rk4_network(*net, args.dt, args.steps, PD_TOL,
                                                         BOUND_TOL, impl=impl)),
        ("rk4_dre", lambda impl: kernels.rk4_dre(*dre, args.dt, args.steps, PD_TOL, BOUND_TOL,
                                                 impl=impl)),
    ):
        tc, oc = best_time(lambda: call("compiled"), args.repeat)
        tp, op = best_time(lambda: call("python"), args.repeat)
        arrays = [(a, b) for a, b in zip(oc, op) if isinstance(a, np.ndarray)]
        diff = max(float(np.abs(a - b).max()) for a, b in arrays)
        rows.append((name, tc, tp, tp / tc, diff))

    print(f"{args.case}, {args.steps} steps of dt={args.dt:g}, best of {args.repeat}")
    print(f"{'kernel':<12} {'compiled [s]':>13} {'python [s]':>11} {'speedup':>8} {'max |diff|':>11}")
    for name, tc, tp, sp, diff in rows:
        print(f"{name:<12} {tc:>13.4f} {tp:>11.4f} {sp:>7.1f}x {diff:>11.2e}")


if __name__ == "__main__":
    main()
