"""Projected stochastic gradient method with a harmonic step rule.

Each iteration draws a fresh realization set (increments and initial
ensemble keyed by ``seed_base`` and the iteration index), evaluates the
cost and its adjoint gradient on that set, and takes the projected step

    u <- P(u - s0/(l+1) * grad)

until the gradient norm drops below ``tol`` or ``l_max`` is reached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .adjoint import evaluate
from .brownian import derive_seed, sample_increments
from .csvio import write_csv
from .errors import BlowupError, ValidationError
from .sde_core import ControlGrid, ModelSpec, TimeGrid


def project_box(v, lower, upper) -> np.ndarray:
    """Componentwise clamp of ``v`` to ``[lower, upper]``.

    For a control grid ``(r, N)`` the bounds are per control component and
    broadcast over time.
    """
    v = np.asarray(v, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(lower > upper):
        raise ValidationError("projection onto an empty box")
    if v.ndim == 2 and lower.ndim == 1:
        lower, upper = lower[:, None], upper[:, None]
    return np.minimum(np.maximum(v, lower), upper)


def step_size(s0: float, l: int) -> float:
    """Harmonic step ``s0 / l`` for iteration ``l >= 1``."""
    if not s0 > 0:
        raise ValidationError(f"s0 must be positive, got {s0}")
    if l < 1:
        raise ValidationError(f"step index must be >= 1, got {l}")
    return s0 / l


@dataclass(frozen=True)
class OptimizerConfig:
    """Inputs of the stochastic gradient method.

    Parameters
    ----------
    s0 : float
        Initial step; iteration ``l`` (0-based) moves with ``s0 / (l + 1)``.
    tol : float
        Stop once the gradient norm is at most ``tol``. For control grids the
        norm is the dt-weighted one, ``sqrt(dt * sum g^2)``.
    l_max : int
        Maximum number of steps. ``l_max = 0`` performs no evaluation at all.
    batch_size : int
        Realizations per iteration.
    seed_base : int
        Root of every random stream used by the run.
    kappa : float, optional
        Overrides the cost's regularization weight when given.
    guard : bool
        Divergence guard: when the cost exceeds ten times its running minimum,
        retry that iteration once from the previous iterate with half the step.
    batch_schedule : callable, optional
        ``l -> batch size``; overrides ``batch_size`` per iteration.
    keep_controls : bool
        Store a copy of every iterate in the history.
    """

    s0: float = 1.0
    tol: float = 1e-6
    l_max: int = 100
    batch_size: int = 1000
    seed_base: int = 0
    kappa: Optional[float] = None
    guard: bool = False
    batch_schedule: Optional[Callable[[int], int]] = None
    keep_controls: bool = False

    def __post_init__(self):
        if not self.s0 > 0:
            raise ValidationError(f"s0 must be positive, got {self.s0}")
        if not self.tol > 0:
            raise ValidationError(f"tol must be positive, got {self.tol}")
        if int(self.l_max) != self.l_max or self.l_max < 0:
            raise ValidationError(f"l_max must be a nonnegative integer, got {self.l_max}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValidationError(f"batch_size must be a positive integer, got {self.batch_size}")
        if self.kappa is not None and self.kappa < 0:
            raise ValidationError(f"kappa must be nonnegative, got {self.kappa}")

    def batch(self, l: int) -> int:
        M = self.batch_size if self.batch_schedule is None else int(self.batch_schedule(l))
        if M < 1:
            raise ValidationError(f"batch schedule gave {M} realizations at iteration {l}")
        return M


@dataclass
class HistoryRecord:
    l: int
    cost: float
    rel_cost: float
    grad_norm: float
    rel_grad_norm: float
    step: float
    control: Optional[np.ndarray] = None


@dataclass
class OptimizationHistory:
    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i) -> HistoryRecord:
        return self.records[i]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def costs(self) -> np.ndarray:
        return self.column("cost")

    @property
    def rel_costs(self) -> np.ndarray:
        return self.column("rel_cost")

    @property
    def grad_norms(self) -> np.ndarray:
        return self.column("grad_norm")

    def to_csv(self, filename, meta=None):
        names = ["l", "cost", "rel_cost", "grad_norm", "rel_grad_norm", "step"]
        rows = ([getattr(r, n) for n in names] for r in self.records)
        return write_csv(filename, names, rows, meta)


def _relative(v: float, ref: float) -> float:
    return v / abs(ref) if ref != 0 else (0.0 if v == 0 else math.inf)


def sgd_run(model: ModelSpec, cost, u0, x0_sampler, cfg: OptimizerConfig, grid: TimeGrid):
    """Run the projected stochastic gradient method.

    Parameters
    ----------
    model : ModelSpec
    cost : CostSpec
    u0 : ControlParam or ControlGrid
        Starting control, inside its box.
    x0_sampler : callable
        ``(control, M, seed) -> (M, d)`` initial ensemble for one iteration.
    cfg : OptimizerConfig
    grid : TimeGrid

    Returns
    -------
    (control, OptimizationHistory)
        The last iterate (the one whose gradient met the tolerance, or the
        iterate after ``l_max`` steps) and one record per evaluation.
    """
    if cfg.kappa is not None and cfg.kappa != cost.kappa:
        cost = replace(cost, kappa=cfg.kappa)
    weighted = isinstance(u0, ControlGrid)
    dt = grid.dt
    hist = OptimizationHistory()
    u = u0
    if cfg.l_max == 0:
        return u, hist

    def run(control, l):
        seed = derive_seed(cfg.seed_base, "iter", l)
        M = cfg.batch(l)
        inc = sample_increments(derive_seed(seed, "increments"), M, grid.N, model.m, dt)
        x0 = np.asarray(x0_sampler(control, M, derive_seed(seed, "x0")), dtype=float)
        try:
            return evaluate(model, cost, control, x0, inc, grid)
        except BlowupError as e:
            raise e.with_iteration(l) from e

    J0 = E0 = None
    best = math.inf
    prev = None  # (control, gradient, step) that produced the current iterate
    for l in range(cfg.l_max + 1):
        ev = run(u, l)
        if cfg.guard and prev is not None and ev.cost > 10.0 * best:
            pu, pg, ps = prev
            u = pu.with_values(project_box(pu.values - 0.5 * ps * pg, pu.lower, pu.upper))
            ev = run(u, l)
        J, g = ev.cost, ev.gradient
        E = u.norm(g, dt) if weighted else u.norm(g)
        if J0 is None:
            J0, E0 = J, E
        best = min(best, J)
        done = E <= cfg.tol or l == cfg.l_max
        s = 0.0 if done else step_size(cfg.s0, l + 1)
        hist.records.append(HistoryRecord(
            l, J, _relative(J, J0), E, _relative(E, E0), s,
            u.values.copy() if cfg.keep_controls else None))
        if done:
            break
        prev = (u, g, s)
        u = u.with_values(project_box(u.values - s * g, u.lower, u.upper))
    return u, hist
