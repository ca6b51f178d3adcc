"""Time the numba kernels against the pure-numpy reference path.

    python3 benchmarks/bench_backends.py [--M 4000] [--N 256] [--repeat 5]

Each case runs once per backend to warm up (and compile), then ``repeat``
times; the median wall time is reported together with the largest
absolute difference between the two backends' results.
"""

from __future__ import annotations

import argparse
import os
import statistics
import time
from dataclasses import replace

import numpy as np

from sdecal import _backend
from sdecal.adjoint import evaluate
from sdecal.brownian import sample_increments, standard_normals
from sdecal.cost import CorrelationCost, DesiredData, OUCost
from sdecal.models import (OuParams, SptParams, ou_initial_ensemble, ou_model, pack_params,
                           sine_targets, perfect_control_grid, spt_equilibrate, spt_model)
from sdecal.sde_core import ControlParam, TimeGrid, em_forward


def _timed(fn, repeat):
    fn()
    times = []
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times), out


def _with_backend(name, fn, repeat):
    old = os.environ.get(_backend.BACKEND_ENV)
    os.environ[_backend.BACKEND_ENV] = name
    try:
        return _timed(fn, repeat)
    finally:
        if old is None:
            os.environ.pop(_backend.BACKEND_ENV)
        else:
            os.environ[_backend.BACKEND_ENV] = old


def cases(M, N):
    p = OuParams()
    grid = TimeGrid(p.T, N)
    tg = sine_targets(p.T)
    ou = ou_model(p)
    U = perfect_control_grid(p, tg, N)
    inc1 = sample_increments(1, M, N, 1, grid.dt)
    x0 = ou_initial_ensemble(tg, M, 2)
    ou_cost = OUCost(DesiredData.from_functions(grid, eta=tg.eta, sigma=tg.sigma))

    sp = SptParams(K=2, gamma=(1.0, 5.0, 5.0))
    sgrid = TimeGrid(SPT_T, N)
    spt = spt_model(sp)
    u = ControlParam(pack_params([1.0, 0.8], [1.0, 1.5]))
    inc3 = sample_increments(3, M, N, sp.d, sgrid.dt)
    sx0 = spt_equilibrate(replace(sp, t_eq=2.0), u.u, M, 4, sgrid.dt)
    spt_cost = CorrelationCost(DesiredData(np.exp(-sgrid.nodes)))

    return {
        "increments": lambda: standard_normals(5, M, N, 2),
        "ou forward": lambda: em_forward(ou, U, x0, inc1, grid).data,
        "ou cost+gradient": lambda: evaluate(ou, ou_cost, U, x0, inc1, grid).gradient,
        "spt forward": lambda: em_forward(spt, u, sx0, inc3, sgrid).data,
        "spt cost+gradient": lambda: evaluate(spt, spt_cost, u, sx0, inc3, sgrid).gradient,
    }


SPT_T = 2.5
SPT_STIFFNESS = 8 * np.pi**2 * 1.0 / 1.0  # 8 pi^2 max(q^2 V) / gamma_0 for the case above


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--M", type=int, default=4000)
    ap.add_argument("--N", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not _backend.NUMBA_OK:
        raise SystemExit("numba is not importable; nothing to compare")
    print(f"M={args.M} N={args.N} threads={_backend.max_threads()} repeat={args.repeat}")
    if SPT_STIFFNESS * SPT_T / args.N >= 2:
        print(f"note: N={args.N} exceeds the explicit stability limit of the SPT cases; "
              "their backend differences are amplified round-off")
    print(f"{'case':<20} {'numpy [s]':>10} {'numba [s]':>10} {'speedup':>8} {'max |diff|':>11}")
    for name, fn in cases(args.M, args.N).items():
        t_np, r_np = _with_backend("numpy", fn, args.repeat)
        t_nb, r_nb = _with_backend("numba", fn, args.repeat)
        diff = float(np.max(np.abs(np.asarray(r_np) - np.asarray(r_nb))))
        print(f"{name:<20} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
