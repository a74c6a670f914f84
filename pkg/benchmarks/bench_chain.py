"""Compiled vs pure-Python MALA chain kernel.

Usage: python benchmarks/bench_chain.py [--steps N] [--repeats R]

Runs the same seeded chain through both backends on three targets, checks
that the trajectories agree, and prints the best-of-R wall time per backend.
"""

import argparse
import time

import numpy as np

from sbgen import _core, pipeline, targets
from sbgen.mcmc import ChainConfig, run_chain


def cases():
    mb = targets.many_body_pairwise(4, 3)
    return [
        ("double_well d=1", targets.double_well(1, 2.0, 0.5), np.array([1.0]), 0.05),
        ("muller_brown", targets.muller_brown(temperature_scale=20.0), np.array([0.6, 0.0]), 1e-4),
        ("many_body 4x3", mb, pipeline._particle_start(mb), 0.02),
    ]


def best_time(fn, repeats):
    best = np.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=100_000)
    ap.add_argument("--py-steps", type=int, default=None,
                    help="steps for the slow backend (default: steps // 10)")
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)
    if "compiled" not in _core.BACKENDS:
        raise SystemExit("compiled backend unavailable; build with pip install -e .")
    py_steps = args.py_steps or max(1, args.steps // 10)

    print(f"{'target':18s} {'compiled us/step':>17s} {'python us/step':>15s} {'speedup':>8s}  agree")
    for name, t, x0, h in cases():
        cfg_c = ChainConfig(args.steps, h, 0, "mala", 7, 1)
        cfg_p = ChainConfig(py_steps, h, 0, "mala", 7, 1)
        tc, _ = best_time(lambda: run_chain(t, x0, cfg_c, backend="compiled"), args.repeats)
        tp, xp = best_time(lambda: run_chain(t, x0, cfg_p, backend="python"), args.repeats)
        xc = run_chain(t, x0, cfg_p, backend="compiled")
        agree = np.max(np.abs(xc - xp)) < 1e-10
        per_c = 1e6 * tc / args.steps
        per_p = 1e6 * tp / py_steps
        print(f"{name:18s} {per_c:17.3f} {per_p:15.3f} {per_p / per_c:7.1f}x  {agree}")


if __name__ == "__main__":
    main()
