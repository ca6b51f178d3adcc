"""Model interface, ensemble Euler-Maruyama integration and ensemble statistics.

All model callbacks are vectorized over the ensemble: ``x`` has shape
``(M, d)`` and the callbacks return per-realization arrays (or a single
array that broadcasts over realizations).

=========  =====================  =========================
callback   per-realization shape  broadcast shape
=========  =====================  =========================
drift      (M, d)                 --
diffusion  (M, d, m)              (d, m)
jac_ax     (M, d, d)              (d, d)
jac_au     (M, d, r)              (d, r)
jac_bx     (M, m, d, d)           (m, d, d); ``None`` = zero
jac_bu     (M, m, d, r)           (m, d, r); ``None`` = zero
=========  =====================  =========================
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _backend
from .brownian import IncrementTensor
from .csvio import write_csv
from .errors import DegenerateVarianceError, IntegrationBlowupError, ValidationError
from .reduce import det_mean

BLOWUP_THRESHOLD = 1e12
VAR_EPS = 1e-12

_PATH_MAGIC = b"SDEPATH1"
_PATH_HEADER = struct.Struct("<8sQQQd")


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValidationError(f"horizon T must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise ValidationError(f"N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt

    def t(self, nu: int) -> float:
        return nu * self.dt


@dataclass(frozen=True, eq=False)
class FusedKernels:
    """Compiled whole-loop kernels a built-in model may supply.

    forward(x0, C, dB, dt) -> X
    adjoint(X, C, dB, src, dt) -> Lam
    grad_terms(X, C, dB, Lam, dt) -> (M, N, r) per-step gradient contributions
    """

    forward: Callable
    adjoint: Callable
    grad_terms: Callable


@dataclass(frozen=True, eq=False)
class ModelSpec:
    d: int
    m: int
    r: int
    drift: Callable
    diffusion: Callable
    jac_ax: Callable
    jac_au: Callable
    jac_bx: Optional[Callable] = None
    jac_bu: Optional[Callable] = None
    diffusion_constant: bool = False
    name: str = "model"
    kernels: Optional[FusedKernels] = field(default=None, repr=False)

    def fused(self) -> Optional[FusedKernels]:
        return self.kernels if _backend.use_numba() else None


@dataclass(frozen=True, eq=False)
class EnsemblePath:
    data: np.ndarray  # (N+1, M, d)
    grid: TimeGrid

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != self.grid.N + 1:
            raise ValidationError(
                f"path shape {self.data.shape} does not match N+1={self.grid.N + 1}")
        self.data.flags.writeable = False

    @property
    def M(self) -> int:
        return self.data.shape[1]

    @property
    def d(self) -> int:
        return self.data.shape[2]

    @property
    def N(self) -> int:
        return self.grid.N


def _box(lower, upper, r):
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (r,)).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (r,)).copy()
    if np.any(lower > upper):
        raise ValidationError(f"empty box: lower {lower} exceeds upper {upper}")
    return lower, upper


@dataclass(frozen=True, eq=False)
class ControlParam:
    """Time-independent parameter vector with box bounds."""

    u: np.ndarray
    lower: np.ndarray = -np.inf
    upper: np.ndarray = np.inf

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u, dtype=float)).copy()
        lower, upper = _box(self.lower, self.upper, u.size)
        if np.any(u < lower) or np.any(u > upper):
            raise ValidationError(f"parameter {u} outside box [{lower}, {upper}]")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def r(self) -> int:
        return self.u.size

    @property
    def values(self) -> np.ndarray:
        return self.u

    def per_step(self, N: int) -> np.ndarray:
        return np.broadcast_to(self.u, (N, self.r))

    def with_values(self, u) -> "ControlParam":
        return ControlParam(u, self.lower, self.upper)

    def inner(self, a, b, dt=None) -> float:
        return float(np.dot(np.ravel(a), np.ravel(b)))

    def norm(self, g=None, dt=None) -> float:
        g = self.u if g is None else g
        return float(np.sqrt(self.inner(g, g)))


@dataclass(frozen=True, eq=False)
class ControlGrid:
    """Piecewise-constant control; column ``nu`` acts on step ``nu``."""

    U: np.ndarray  # (r, N)
    lower: np.ndarray = -np.inf
    upper: np.ndarray = np.inf

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        if U.ndim != 2:
            raise ValidationError(f"control grid must be r x N, got shape {U.shape}")
        U = U.copy()
        lower, upper = _box(self.lower, self.upper, U.shape[0])
        if np.any(U < lower[:, None]) or np.any(U > upper[:, None]):
            raise ValidationError("control grid has columns outside the box")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def constant(cls, u, N: int, lower=-np.inf, upper=np.inf) -> "ControlGrid":
        u = np.asarray(u, dtype=float)
        return cls(np.repeat(u[:, None], N, axis=1), lower, upper)

    @property
    def r(self) -> int:
        return self.U.shape[0]

    @property
    def N(self) -> int:
        return self.U.shape[1]

    @property
    def values(self) -> np.ndarray:
        return self.U

    def per_step(self, N: int) -> np.ndarray:
        if N != self.N:
            raise ValidationError(f"control grid has {self.N} columns, time grid has N={N}")
        return self.U.T

    def with_values(self, U) -> "ControlGrid":
        return ControlGrid(U, self.lower, self.upper)

    def inner(self, a, b, dt) -> float:
        return float(dt * np.sum(np.asarray(a) * np.asarray(b)))

    def norm(self, g=None, dt=None) -> float:
        if dt is None:
            raise ValidationError("weighted grid norm needs dt")
        g = self.U if g is None else g
        return float(np.sqrt(dt) * np.linalg.norm(g))


def per_sample(a, M: int, shape: tuple) -> np.ndarray:
    """Broadcast a callback result to ``(M, *shape)``."""
    return np.broadcast_to(np.asarray(a, dtype=float), (M,) + shape)


def _check_forward_inputs(model, C, x0, inc, grid):
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = np.broadcast_to(x0, (inc.M, model.d))
    if x0.shape != (inc.M, model.d):
        raise ValidationError(f"x0 shape {x0.shape} != (M, d) = ({inc.M}, {model.d})")
    if inc.N != grid.N or inc.m != model.m:
        raise ValidationError(
            f"increments (M={inc.M}, N={inc.N}, m={inc.m}) do not match "
            f"grid N={grid.N} / model m={model.m}")
    if abs(inc.dt - grid.dt) > 1e-12 * grid.dt:
        raise ValidationError(f"increment dt {inc.dt} != grid dt {grid.dt}")
    if C.shape != (grid.N, model.r):
        raise ValidationError(f"controls shape {C.shape} != (N, r) = ({grid.N}, {model.r})")
    return np.ascontiguousarray(x0)


def first_bad(arr: np.ndarray, threshold: float = BLOWUP_THRESHOLD):
    """(nu, mu) of the first non-finite or over-threshold entry, or None."""
    with np.errstate(invalid="ignore"):
        bad = ~(np.abs(arr) <= threshold)
    if arr.ndim == 3:
        bad = bad.any(axis=2)
    if not bad.any():
        return None
    nu = int(np.argmax(bad.any(axis=1)))
    mu = int(np.argmax(bad[nu]))
    return nu, mu


def _forward_numpy(model: ModelSpec, C, x0, inc, grid):
    M, N, dt = inc.M, grid.N, grid.dt
    X = np.empty((N + 1, M, model.d))
    X[0] = x0
    dB = inc.data
    with np.errstate(over="ignore", invalid="ignore"):
        for nu in range(N):
            x, u, t = X[nu], C[nu], nu * dt
            b = per_sample(model.diffusion(x, u, t), M, (model.d, model.m))
            X[nu + 1] = x + model.drift(x, u, t) * dt + np.einsum("kij,kj->ki", b, dB[:, nu, :])
            if not np.all(np.abs(X[nu + 1]) <= BLOWUP_THRESHOLD):
                break
    return X


def em_forward(model: ModelSpec, controls, x0, inc: IncrementTensor, grid: TimeGrid) -> EnsemblePath:
    """Euler-Maruyama ensemble solve; ``controls`` is ``(N, r)``, a ControlParam or a ControlGrid."""
    C = controls.per_step(grid.N) if hasattr(controls, "per_step") else np.asarray(controls, float)
    C = np.ascontiguousarray(C, dtype=float)
    x0 = _check_forward_inputs(model, C, x0, inc, grid)
    k = model.fused()
    if k is not None:
        X = k.forward(x0, C, inc.data, grid.dt)
    else:
        X = _forward_numpy(model, C, x0, inc, grid)
    bad = first_bad(X)
    if bad is not None:
        raise IntegrationBlowupError(mu=bad[1], nu=bad[0])
    return EnsemblePath(X, grid)


def em_forward_param(model, u: ControlParam, x0, inc, grid) -> EnsemblePath:
    return em_forward(model, u.per_step(grid.N), x0, inc, grid)


def em_forward_grid(model, U: ControlGrid, x0, inc, grid) -> EnsemblePath:
    return em_forward(model, U.per_step(grid.N), x0, inc, grid)


def _check_nu(path: EnsemblePath, nu: int):
    if not 0 <= nu <= path.N:
        raise IndexError(f"time index {nu} outside 0..{path.N}")


def ensemble_mean(path: EnsemblePath, nu: int) -> np.ndarray:
    _check_nu(path, nu)
    return det_mean(path.data[nu], axis=0)


def ensemble_variance(path: EnsemblePath, nu: int, component: int = 0) -> float:
    """Biased (divide-by-M) ensemble variance of one state component."""
    _check_nu(path, nu)
    if not 0 <= component < path.d:
        raise IndexError(f"component {component} outside 0..{path.d - 1}")
    x = path.data[nu, :, component]
    return float(det_mean((x - det_mean(x)) ** 2))


def path_means(path: EnsemblePath) -> np.ndarray:
    """``(N+1, d)`` ensemble means at every node."""
    return det_mean(path.data, axis=1)


def path_variances(path: EnsemblePath) -> np.ndarray:
    means = path_means(path)
    return det_mean((path.data - means[:, None, :]) ** 2, axis=1)


def _centered_tracer(path: EnsemblePath) -> np.ndarray:
    x = path.data[:, :, 0]
    return x - det_mean(x, axis=1)[:, None]


def path_correlations(path: EnsemblePath, eps: float = VAR_EPS):
    """Normalized correlation at every node plus the centered tracer and its second moments.

    Returns ``(corr, Y, second_moment)`` with ``Y`` of shape ``(N+1, M)``.
    """
    Y = _centered_tracer(path)
    num = det_mean(Y * Y[0][None, :], axis=1)
    den = det_mean(Y * Y, axis=1)
    bad = np.nonzero(~(den > eps))[0]
    if bad.size:
        raise DegenerateVarianceError(
            f"tracer variance {den[bad[0]]:.3e} <= {eps:g} at node nu={bad[0]}")
    return num / den, Y, den


def normalized_correlation(path: EnsemblePath, nu: int, eps: float = VAR_EPS) -> float:
    _check_nu(path, nu)
    x = path.data[:, :, 0]
    y0 = x[0] - det_mean(x[0])
    y = x[nu] - det_mean(x[nu])
    den = float(det_mean(y * y))
    if not den > eps:
        raise DegenerateVarianceError(f"tracer variance {den:.3e} <= {eps:g} at node nu={nu}")
    return float(det_mean(y * y0)) / den


def write_statistics_csv(path: EnsemblePath, filename, with_corr: bool = False, meta=None):
    """Columns ``nu, t, mean_1..mean_d, var_1..var_d[, corr]``."""
    means, var = path_means(path), path_variances(path)
    d = path.d
    header = ["nu", "t"] + [f"mean_{i + 1}" for i in range(d)] + [f"var_{i + 1}" for i in range(d)]
    cols = [means, var]
    if with_corr:
        header.append("corr")
        cols.append(path_correlations(path)[0][:, None])
    table = np.hstack(cols)
    t = path.grid.nodes
    rows = ([nu, float(t[nu])] + [float(v) for v in table[nu]] for nu in range(path.N + 1))
    return write_csv(filename, header, rows, meta)


def save_path(filename, path: EnsemblePath) -> None:
    """Binary dump: magic ``SDEPATH1``, N+1, M, d (u64), dt (f64), then float64 data."""
    with open(filename, "wb") as fh:
        fh.write(_PATH_HEADER.pack(_PATH_MAGIC, path.N + 1, path.M, path.d, path.grid.dt))
        fh.write(np.ascontiguousarray(path.data, dtype="<f8").tobytes())


def load_path(filename) -> EnsemblePath:
    with open(filename, "rb") as fh:
        raw = fh.read()
    magic, n1, M, d, dt = _PATH_HEADER.unpack_from(raw)
    if magic != _PATH_MAGIC:
        raise ValidationError(f"{filename}: bad magic {magic!r}")
    data = np.frombuffer(raw[_PATH_HEADER.size:], dtype="<f8").reshape(n1, M, d).copy()
    return EnsemblePath(data, TimeGrid(dt * (n1 - 1), n1 - 1))


def jacobian_fd_error(model: ModelSpec, x, u, t: float, eps: float = 1e-6) -> dict:
    """Max relative error of every supplied Jacobian against central differences.

    ``x`` is ``(M, d)`` probe points, ``u`` a single control vector.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.asarray(u, dtype=float)
    M, d, m, r = x.shape[0], model.d, model.m, model.r

    def b_of(xx, uu):
        return np.array(per_sample(model.diffusion(xx, uu, t), M, (d, m)))

    def rel(an, fd):
        scale = max(np.max(np.abs(fd)), np.max(np.abs(an)), 1e-12)
        return float(np.max(np.abs(an - fd)) / scale)

    fd_ax = np.empty((M, d, d))
    fd_bx = np.empty((M, m, d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = eps
        fd_ax[:, :, k] = (model.drift(x + e, u, t) - model.drift(x - e, u, t)) / (2 * eps)
        fd_bx[:, :, :, k] = np.transpose((b_of(x + e, u) - b_of(x - e, u)) / (2 * eps), (0, 2, 1))
    fd_au = np.empty((M, d, r))
    fd_bu = np.empty((M, m, d, r))
    for k in range(r):
        e = np.zeros(r)
        e[k] = eps
        fd_au[:, :, k] = (model.drift(x, u + e, t) - model.drift(x, u - e, t)) / (2 * eps)
        fd_bu[:, :, :, k] = np.transpose((b_of(x, u + e) - b_of(x, u - e)) / (2 * eps), (0, 2, 1))

    out = {
        "ax": rel(per_sample(model.jac_ax(x, u, t), M, (d, d)), fd_ax),
        "au": rel(per_sample(model.jac_au(x, u, t), M, (d, r)), fd_au),
    }
    bx = np.zeros((M, m, d, d)) if model.jac_bx is None else per_sample(model.jac_bx(x, u, t), M, (m, d, d))
    bu = np.zeros((M, m, d, r)) if model.jac_bu is None else per_sample(model.jac_bu(x, u, t), M, (m, d, r))
    out["bx"] = rel(bx, fd_bx)
    out["bu"] = rel(bu, fd_bu)
    return out
