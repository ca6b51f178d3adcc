"""Command-line entry point: ``sdecal <command> CONFIG [-o OUTDIR] [--set key=value ...]``.

Commands
--------
simulate     forward solve, ensemble statistics CSV
calibrate    stochastic gradient method on a time-independent parameter vector
control      stochastic gradient method on a piecewise-constant control grid
gradcheck    adjoint gradient against central differences (exit 1 on failure)
converge     discrete vs. continuous cost on refining grids (OU)
equilibrate  equilibrated initial ensemble (SPT)
make-data    correlation target generated from planted parameters (SPT)

Exit status: 0 success, 1 numerical or validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from ._backend import THREADS_ENV, set_threads
from .adjoint import evaluate
from .brownian import derive_seed, sample_increments, save_increments
from .config import ConfigError, RunConfig
from .cost import CorrelationCost, DesiredData, OUCost
from .csvio import read_csv, write_csv
from .errors import SdeCalError
from .models.ou import (OuParams, ou_model, ou_normal_ensemble, ou_perfect_controls,
                        perfect_control_grid, sine_targets)
from .models.spt import SptParams, pack_params, spt_equilibrate, spt_model, unpack_params
from .optimize import OptimizerConfig, sgd_run
from .sde_core import (ControlGrid, ControlParam, ModelSpec, TimeGrid, em_forward,
                       path_correlations, save_path, write_statistics_csv)
from .verify import (convergence_summary, fd_gradient_check, semidiscrete_convergence_study,
                     with_corrupted_jac_au, write_convergence_csv)

COMMANDS = ("simulate", "calibrate", "control", "gradcheck", "converge", "equilibrate", "make-data")


@dataclass
class Problem:
    cfg: RunConfig
    model: ModelSpec
    grid: TimeGrid
    cost: object | None
    sampler: Callable  # (control, M, seed) -> (M, d)
    ou: OuParams | None = None
    spt: SptParams | None = None


def _meta(cfg: RunConfig, command: str) -> dict:
    meta = {"command": command, "seed": cfg.ensemble.seed, "config_hash": cfg.hash(),
            "version": __version__}
    env = os.environ.get(THREADS_ENV)
    if env:
        meta["threads_env"] = env
    return meta


def _targets(cfg: RunConfig, grid: TimeGrid) -> DesiredData:
    t = cfg.cost.target
    if t.startswith("builtin:") or t == "ou-sine":
        return DesiredData.builtin(t.removeprefix("builtin:"), grid)
    return DesiredData.from_csv(cfg.resolve(t), grid)


def build_problem(cfg: RunConfig, need_cost: bool = True) -> Problem:
    grid = TimeGrid(cfg.grid.T, cfg.grid.N)
    m = cfg.model
    if m.name == "ou":
        p = OuParams(m.theta, cfg.grid.T)
        data = _targets(cfg, grid)
        if "eta" not in data.columns or "sigma" not in data.columns:
            raise ConfigError("OU targets need 'eta' and 'sigma' columns")
        mean0, var0 = float(data.column("eta")[0]), float(data.column("sigma")[0])

        def sampler(control, M, seed):
            return ou_normal_ensemble(mean0, var0, M, seed)

        return Problem(cfg, ou_model(p), grid, OUCost(data, cfg.cost.kappa), sampler, ou=p)

    sp = SptParams(K=m.K, gamma=m.gamma, kappa_ext=m.kappa_ext, v0=m.v0, kBT=m.kBT,
                   t_eq=m.t_eq, noise=m.noise)
    cost = None
    if need_cost:
        if cfg.cost.kappa:
            raise ConfigError("the SPT correlation cost takes no regularization (cost.kappa = 0)")
        data = _targets(cfg, grid)
        cost = CorrelationCost(DesiredData(data.values[:, :1], data.columns[:1]))

    def sampler(control, M, seed):
        u = control.values if hasattr(control, "values") else np.asarray(control, float)
        if u.ndim == 2:
            u = u[:, 0]
        return spt_equilibrate(sp, u, M, seed, grid.dt)

    return Problem(cfg, spt_model(sp), grid, cost, sampler, spt=sp)


def _box(cfg: RunConfig, r: int):
    o = cfg.optimizer
    lo = -np.inf if o.lower is None else np.asarray(o.lower, float)
    hi = np.inf if o.upper is None else np.asarray(o.upper, float)
    for name, b in (("lower", lo), ("upper", hi)):
        if np.ndim(b) and b.size not in (1, r):
            raise ConfigError(f"optimizer.{name} needs 1 or r={r} entries")
    return lo, hi


def _spt_params(cfg: RunConfig) -> np.ndarray:
    K = cfg.model.K
    V0 = np.broadcast_to(np.asarray(cfg.model.V0, float), (K,))
    d = np.broadcast_to(np.asarray(cfg.model.d, float), (K,))
    return pack_params(V0, d)


def _read_control_csv(path, N: int, r: int) -> np.ndarray:
    header, rows = read_csv(path)
    cols = [f"u{i + 1}" for i in range(r)]
    if header[:2] != ["nu", "t"] or header[2:] != cols:
        raise ConfigError(f"{path}: expected columns nu,t,{','.join(cols)}")
    U = np.array([[float(x) for x in row[2:]] for row in rows]).T
    if U.shape != (r, N):
        raise ConfigError(f"{path}: control has shape {U.shape}, grid needs {(r, N)}")
    return U


def control_of(prob: Problem, kind: str):
    """The control a command runs with: ``"param"`` or ``"grid"``."""
    cfg, model, N = prob.cfg, prob.model, prob.grid.N
    c = cfg.controls
    lo, hi = _box(cfg, model.r)
    if c.file:
        U = _read_control_csv(cfg.resolve(c.file), N, model.r)
        return ControlGrid(U, lo, hi)
    if c.perfect:
        if prob.ou is None or cfg.cost.target not in ("ou-sine", "builtin:ou-sine"):
            raise ConfigError("controls.perfect needs the OU model with the ou-sine target")
        return perfect_control_grid(prob.ou, sine_targets(prob.ou.T), N, c.perfect, lo, hi)
    if c.u is not None:
        u = np.asarray(c.u, float)
    elif prob.spt is not None:
        u = _spt_params(cfg)
    else:
        raise ConfigError("no controls given: set controls.u, controls.perfect or controls.file")
    if u.size != model.r:
        raise ConfigError(f"controls.u needs r={model.r} entries, got {u.size}")
    return ControlParam(u, lo, hi) if kind == "param" else ControlGrid.constant(u, N, lo, hi)


def _sample(prob: Problem, control, seed: int):
    M = prob.cfg.ensemble.M
    inc = sample_increments(derive_seed(seed, "increments"), M, prob.grid.N, prob.model.m,
                            prob.grid.dt)
    x0 = prob.sampler(control, M, derive_seed(seed, "x0"))
    return x0, inc


# -- commands ---------------------------------------------------------------

def cmd_simulate(cfg, out: Path, meta):
    prob = build_problem(cfg, need_cost=False)
    control = control_of(prob, "param" if prob.spt is not None else "grid")
    x0, inc = _sample(prob, control, cfg.ensemble.seed)
    path = em_forward(prob.model, control, x0, inc, prob.grid)
    f = write_statistics_csv(path, out / "statistics.csv",
                             with_corr=prob.spt is not None or cfg.output.correlations, meta=meta)
    print(f"wrote {f}")
    if cfg.output.binary:
        save_path(out / "path.bin", path)
        save_increments(out / "increments.bin", inc)
    return 0


def _write_params(u: np.ndarray, prob: Problem, filename, meta):
    rows = [[f"u{i + 1}", float(v)] for i, v in enumerate(u)]
    if prob.spt is not None:
        V0, d = unpack_params(u)
        for k in range(len(V0)):
            rows += [[f"V0_{k + 1}", float(V0[k])], [f"d_{k + 1}", float(d[k])]]
    return write_csv(filename, ["name", "value"], rows, meta)


def _opt_config(cfg: RunConfig) -> OptimizerConfig:
    o = cfg.optimizer
    return OptimizerConfig(s0=o.s0, tol=o.tol, l_max=o.l_max, batch_size=cfg.ensemble.M,
                           seed_base=cfg.ensemble.seed, guard=o.guard)


def _report(hist):
    if len(hist):
        last = hist[len(hist) - 1]
        print(f"{len(hist)} evaluations, final cost {last.cost:.6e} "
              f"(relative {last.rel_cost:.4e}), gradient norm {last.grad_norm:.3e}")
    else:
        print("no iterations (l_max = 0)")


def cmd_calibrate(cfg, out: Path, meta):
    prob = build_problem(cfg)
    lo, hi = _box(cfg, prob.model.r)
    if cfg.optimizer.u0 is not None:
        u0 = np.asarray(cfg.optimizer.u0, float)
    elif prob.spt is not None:
        u0 = _spt_params(cfg)
    elif cfg.controls.u is not None:
        u0 = np.asarray(cfg.controls.u, float)
    else:
        u0 = np.zeros(prob.model.r)
    if u0.size != prob.model.r:
        raise ConfigError(f"optimizer.u0 needs r={prob.model.r} entries, got {u0.size}")
    u, hist = sgd_run(prob.model, prob.cost, ControlParam(u0, lo, hi), prob.sampler,
                      _opt_config(cfg), prob.grid)
    hist.to_csv(out / "history.csv", meta)
    _write_params(u.u, prob, out / "params.csv", meta)
    _report(hist)
    print(f"final parameters {np.array2string(u.u, precision=6)}")
    return 0


def cmd_control(cfg, out: Path, meta):
    prob = build_problem(cfg)
    lo, hi = _box(cfg, prob.model.r)
    N = prob.grid.N
    if cfg.optimizer.U0 is not None:
        v = np.asarray(cfg.optimizer.U0, float)
        if v.size != prob.model.r:
            raise ConfigError(f"optimizer.U0 needs r={prob.model.r} entries, got {v.size}")
        U0 = ControlGrid.constant(v, N, lo, hi)
    elif cfg.controls.file or cfg.controls.perfect or cfg.controls.u is not None:
        U0 = control_of(prob, "grid")
    else:
        U0 = ControlGrid(np.zeros((prob.model.r, N)), lo, hi)
    U, hist = sgd_run(prob.model, prob.cost, U0, prob.sampler, _opt_config(cfg), prob.grid)
    hist.to_csv(out / "history.csv", meta)
    t = prob.grid.nodes[:-1]
    header = ["nu", "t"] + [f"u{i + 1}" for i in range(U.r)]
    write_csv(out / "control.csv", header,
              ([nu, float(t[nu]), *map(float, U.U[:, nu])] for nu in range(N)), meta)
    _report(hist)
    return 0


def cmd_gradcheck(cfg, out: Path, meta):
    prob = build_problem(cfg)
    control = control_of(prob, "param" if prob.spt is not None else "grid")
    model = prob.model
    if cfg.gradcheck.corrupt:
        row, col = cfg.gradcheck.corrupt
        if not (0 <= row < model.d and 0 <= col < model.r):
            raise ConfigError(f"gradcheck.corrupt entry ({row}, {col}) outside a_u of shape "
                              f"({model.d}, {model.r})")
        model = with_corrupted_jac_au(model, row, col, cfg.gradcheck.corrupt_rel)
    x0, inc = _sample(prob, control, cfg.ensemble.seed)
    rep = fd_gradient_check(model, prob.cost, control, x0, inc, prob.grid,
                            cfg.gradcheck.h, cfg.gradcheck.tol)
    rep.to_csv(out / "gradcheck.csv", meta)
    print(rep.summary())
    return 0 if rep.passed else 1


def cmd_converge(cfg, out: Path, meta):
    if cfg.model.name != "ou":
        raise ConfigError("converge needs the OU model (closed-form continuous cost)")
    p = OuParams(cfg.model.theta, cfg.grid.T)
    if cfg.cost.target not in ("ou-sine", "builtin:ou-sine"):
        raise ConfigError("converge needs the ou-sine target (analytic eta, sigma)")
    targets = sine_targets(p.T)
    c = cfg.controls
    if c.perfect:
        variant = c.perfect
        controls = (lambda s: ou_perfect_controls(p, targets, s, variant)[0],
                    lambda s: ou_perfect_controls(p, targets, s, variant)[1])
    elif c.u is not None and len(c.u) == 2:
        controls = (float(c.u[0]), float(c.u[1]))
    else:
        raise ConfigError("converge needs controls.u (two constants) or controls.perfect")
    rows = semidiscrete_convergence_study(p, controls, targets, cfg.converge.N_list,
                                          cfg.ensemble.M, cfg.ensemble.seed, cfg.cost.kappa,
                                          cfg.converge.batches)
    write_convergence_csv(rows, out / "convergence.csv", meta)
    print(convergence_summary(rows))
    return 0


def cmd_equilibrate(cfg, out: Path, meta):
    if cfg.model.name != "spt":
        raise ConfigError("equilibrate needs the SPT model")
    prob = build_problem(cfg, need_cost=False)
    u = _spt_params(cfg)
    x = prob.sampler(u, cfg.ensemble.M, derive_seed(cfg.ensemble.seed, "x0"))
    header = ["mu"] + [f"x{i + 1}" for i in range(x.shape[1])]
    f = write_csv(out / "ensemble.csv", header, ([mu, *map(float, x[mu])] for mu in range(len(x))),
                  meta)
    print(f"wrote {f}")
    if cfg.output.binary:
        np.save(out / "ensemble.npy", x)
    return 0


def cmd_make_data(cfg, out: Path, meta):
    if cfg.model.name != "spt":
        raise ConfigError("make-data needs the SPT model")
    prob = build_problem(cfg, need_cost=False)
    u = ControlParam(_spt_params(cfg))
    x0, inc = _sample(prob, u, cfg.ensemble.seed)
    corr = path_correlations(em_forward(prob.model, u, x0, inc, prob.grid))[0]
    f = write_csv(out / "target.csv", ["t", "value"], zip(map(float, prob.grid.nodes), map(float, corr)),
                  meta)
    print(f"wrote {f}")
    return 0


HANDLERS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "control": cmd_control,
    "gradcheck": cmd_gradcheck,
    "converge": cmd_converge,
    "equilibrate": cmd_equilibrate,
    "make-data": cmd_make_data,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sdecal", description=__doc__.split("\n\n")[0],
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("config", help="config file (key = value lines, or .json)")
    ap.add_argument("-o", "--out", default=".", help="output directory (default: current)")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config entry; repeatable")
    return ap


def run_config(path, command: str, out=".", overrides=()) -> int:
    """Run one command from a config file; returns the exit status."""
    cfg = RunConfig.load(path, overrides)
    set_threads(cfg.ensemble.threads)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return HANDLERS[command](cfg, out, _meta(cfg, command))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run_config(args.config, args.command, args.out, args.overrides)
    except (SdeCalError, OSError, ValueError) as e:
        print(f"sdecal: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
