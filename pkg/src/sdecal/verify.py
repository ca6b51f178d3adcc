"""Independent oracles: finite-difference gradient checks and the semidiscrete convergence study."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .adjoint import evaluate
from .brownian import derive_seed, sample_increments
from .cost import DesiredData, OUCost
from .csvio import write_csv
from .errors import ValidationError
from .sde_core import ControlGrid, ModelSpec, TimeGrid, em_forward, per_sample
from .models.ou import OuParams, OuTargets, ou_continuous_cost, ou_initial_ensemble, ou_model

# Component errors are measured against max(|fd_i|, SCALE_FLOOR * max_j |fd_j|)
# so that components that happen to vanish do not produce meaningless ratios.
SCALE_FLOOR = 1e-2


@dataclass
class GradCheckReport:
    analytic: np.ndarray
    fd: np.ndarray
    tol: float
    h: float
    abs_err: np.ndarray = field(init=False)
    rel_err: np.ndarray = field(init=False)

    def __post_init__(self):
        self.analytic = np.asarray(self.analytic, dtype=float)
        self.fd = np.asarray(self.fd, dtype=float)
        self.abs_err = np.abs(self.analytic - self.fd)
        scale = max(float(np.max(np.abs(self.fd))), 1e-300)
        self.rel_err = self.abs_err / np.maximum(np.abs(self.fd), SCALE_FLOOR * scale)

    @property
    def max_rel_error(self) -> float:
        return float(np.max(self.rel_err))

    @property
    def l2_rel_error(self) -> float:
        return float(np.linalg.norm(self.analytic - self.fd) / max(np.linalg.norm(self.fd), 1e-300))

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def flagged(self) -> list[tuple]:
        """Indices of components whose relative error exceeds the tolerance."""
        return [tuple(int(i) for i in ix) for ix in np.argwhere(self.rel_err > self.tol)]

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"gradient check {status}: max relative error {self.max_rel_error:.3e} "
                 f"(tol {self.tol:g}, h {self.h:g}, {self.fd.size} components)"]
        for ix in self.flagged()[:20]:
            lines.append(f"  component {ix}: analytic {self.analytic[ix]:.10e} "
                         f"fd {self.fd[ix]:.10e} rel {self.rel_err[ix]:.3e}")
        return "\n".join(lines)

    def to_csv(self, filename, meta=None):
        idx = list(np.ndindex(self.fd.shape))
        header = ["component"] + (["nu"] if self.fd.ndim == 2 else []) + \
            ["analytic", "fd", "abs_err", "rel_err"]
        rows = ([ix[0] + 1, *ix[1:], float(self.analytic[ix]), float(self.fd[ix]),
                 float(self.abs_err[ix]), float(self.rel_err[ix])] for ix in idx)
        return write_csv(filename, header, rows, meta)


def fd_gradient_check(model: ModelSpec, cost, control, x0, inc, grid: TimeGrid,
                      h: float = 1e-5, tol: float = 1e-5) -> GradCheckReport:
    """Compare the adjoint gradient with central differences on common increments.

    For a control grid the analytic directional derivative along the unit
    entry ``e_(i,nu)`` is ``dt * grad[i, nu]`` (dt-weighted inner product).
    """
    if not h > 0:
        raise ValidationError(f"h must be positive, got {h}")
    v = control.values
    lo = control.lower[:, None] if v.ndim == 2 else control.lower
    hi = control.upper[:, None] if v.ndim == 2 else control.upper
    if np.any(v - lo <= h) or np.any(hi - v <= h):
        raise ValidationError(f"control lies within h={h:g} of the box boundary")

    ev = evaluate(model, cost, control, x0, inc, grid)
    analytic = ev.gradient * grid.dt if isinstance(control, ControlGrid) else ev.gradient

    def J(vals):
        c = control.with_values(vals)
        return cost.value(em_forward(model, c, x0, inc, grid), c)

    fd = np.empty_like(v)
    for ix in np.ndindex(v.shape):
        vp, vm = v.copy(), v.copy()
        vp[ix] += h
        vm[ix] -= h
        fd[ix] = (J(vp) - J(vm)) / (2 * h)
    return GradCheckReport(analytic, fd, tol, h)


def with_corrupted_jac_au(model: ModelSpec, row: int, col: int, rel: float = 0.01) -> ModelSpec:
    """Copy of ``model`` whose ``a_u[row, col]`` is scaled by ``1 + rel`` (fault injection).

    Compiled kernels are dropped so the corrupted Jacobian is actually used.
    """
    base = model.jac_au

    def jac_au(x, u, t):
        J = np.array(per_sample(base(x, u, t), np.atleast_2d(x).shape[0], (model.d, model.r)))
        J[:, row, col] *= 1.0 + rel
        return J

    return replace(model, jac_au=jac_au, kernels=None, name=model.name + "-corrupted")


@dataclass
class ConvergenceRow:
    N: int
    J_N: float
    J_exact: float
    stderr: float

    @property
    def error(self) -> float:
        return abs(self.J_N - self.J_exact)


def _steps_for(controls, N, T):
    u1, u2 = controls
    t = np.arange(N) * (T / N)
    c1 = u1(t) if callable(u1) else np.full(N, float(u1))
    c2 = u2(t) if callable(u2) else np.full(N, float(u2))
    return ControlGrid(np.vstack([c1, c2]))


def semidiscrete_convergence_study(p: OuParams, controls, targets: OuTargets, N_list, M: int,
                                   seed: int, kappa: float = 0.0, batches: int = 10):
    """Discrete cost on refining grids against the closed-form continuous cost (OU).

    All grids share one Brownian path per realization: increments are drawn
    on the finest grid and summed onto the coarser ones. ``stderr`` is the
    spread of the discrete cost over ``batches`` equal sub-ensembles divided
    by ``sqrt(batches)``.
    """
    N_list = [int(n) for n in N_list]
    if not N_list:
        raise ValidationError("empty N list")
    N_fine = max(N_list)
    if any(N_fine % n for n in N_list):
        raise ValidationError(f"every N must divide the finest N={N_fine}")
    if M < batches:
        raise ValidationError(f"need at least {batches} realizations")
    model = ou_model(p)
    fine = sample_increments(derive_seed(seed, "increments"), M, N_fine, 1, p.T / N_fine)
    x0 = ou_initial_ensemble(targets, M, derive_seed(seed, "x0"))
    J_exact = ou_continuous_cost(p, controls, targets, float(targets.eta(0.0)),
                                 float(targets.sigma(0.0)), kappa)
    size = M // batches
    rows = []
    for N in N_list:
        grid = TimeGrid(p.T, N)
        inc = fine.coarsen(N_fine // N)
        U = _steps_for(controls, N, p.T)
        cost = OUCost(DesiredData.from_functions(grid, eta=targets.eta, sigma=targets.sigma), kappa)
        J_N = cost.value(em_forward(model, U, x0, inc, grid), U)
        sub = []
        for b in range(batches):
            rows_b = slice(b * size, (b + 1) * size)
            sub.append(cost.value(em_forward(model, U, x0[rows_b], inc.subset(rows_b), grid), U))
        rows.append(ConvergenceRow(N, J_N, J_exact, float(np.std(sub, ddof=1) / math.sqrt(batches))))
    return rows


def write_convergence_csv(rows, filename, meta=None):
    return write_csv(filename, ["N", "J_N", "J_exact", "abs_err", "stderr"],
                     ([r.N, r.J_N, r.J_exact, r.error, r.stderr] for r in rows), meta)


def convergence_summary(rows) -> str:
    lines = [f"{'N':>6} {'J_N':>14} {'J_exact':>14} {'|err|':>12} {'stderr':>10}"]
    for r in rows:
        lines.append(f"{r.N:6d} {r.J_N:14.8f} {r.J_exact:14.8f} {r.error:12.4e} {r.stderr:10.2e}")
    return "\n".join(lines)
