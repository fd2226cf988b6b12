"""Time the compiled kernels against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 3]

Each kernel runs the same workload on both backends; the table reports the
best wall time per backend, the speed-up and the largest output difference.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from qcool import kernels
from qcool.fock import dark_density
from qcool.qfunc import GridGeometry, qgrid_from_fock

PHYS = (1.0, 1.0, 1.0)  # hbar, mass, omega


def workloads():
    rng = np.random.default_rng(0)
    dW = rng.normal(0.0, np.sqrt(1e-3), 20000)
    yield ("gaussian_run (20000 steps)",
           lambda m: m.gaussian_run((0.5, -0.3, 0.8, 0.1, 0.6), 1.0, 1.0, 1.0, 0.3, 1.0,
                                    0.0, -1.35, dW, 1e-3, 0),
           lambda out: np.asarray(out[0]))
    rho = dark_density(30).matrix
    inc = rng.normal(0.0, np.sqrt(1e-4), 5000)
    yield ("fock_run (dim 30, 5000 steps)",
           lambda m: m.fock_run(rho, 1.0, 1.0, 1.0, 0.3, 1.0, 0.0, -1.35, inc, np.empty(0),
                                1e-4, 0, 5000),
           lambda out: np.asarray(out[0]))
    g = GridGeometry(128, 128)
    Q0 = qgrid_from_fock(dark_density(30), g).values
    dq = rng.normal(0.0, np.sqrt(5e-4), 200)
    yield ("qfunc_run (128x128, 200 steps)",
           lambda m: m.qfunc_run(Q0, g.x, g.y, 1.0, 1.0, 1.0, 0.3, 1.0, 0.0, -1.35, dq, 5e-4,
                                 20, 200, 2e-3),
           lambda out: np.asarray(out[0]))


def best_time(fn, repeat: int):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    py = kernels.backend_module("python")
    try:
        cy = kernels.backend_module("cython")
    except ImportError:
        print("compiled kernels are not built; only the numpy fallback is available")
        return 1
    print(f"{'kernel':34s} {'numpy [s]':>10s} {'cython [s]':>10s} {'speed-up':>9s} {'max diff':>9s}")
    for name, call, pick in workloads():
        tp, op = best_time(lambda: call(py), args.repeat)
        tc, oc = best_time(lambda: call(cy), args.repeat)
        diff = float(np.abs(pick(op) - pick(oc)).max())
        print(f"{name:34s} {tp:10.4f} {tc:10.4f} {tp / tc:9.1f} {diff:9.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
