"""Discrete tracking costs and the per-realization state gradients the adjoint consumes.

Every cost uses the same left-endpoint quadrature: nodes ``0..N-1`` carry
weight ``dt``, the terminal node carries weight one. The state gradients
returned here leave out the ``1/M`` factor of the true partial derivative:
with ``w_nu = dt`` (running) or ``1`` (terminal),

    dJ/dX[nu, mu] = (w_nu / M) * source[nu, mu].

The adjoint recursion is written for exactly this normalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .csvio import read_csv
from .errors import ValidationError
from .sde_core import (EnsemblePath, TimeGrid, path_correlations, path_means,
                       path_variances)


@dataclass(frozen=True, eq=False)
class DesiredData:
    """Targets at every grid node; ``values`` is ``(N+1, l)``."""

    values: np.ndarray
    columns: tuple = ("value",)
    terminal: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[1] != len(self.columns):
            raise ValidationError(f"{v.shape[1]} target columns but names {self.columns}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("target data contains non-finite values")
        term = v[-1].copy() if self.terminal is None else np.atleast_1d(np.asarray(self.terminal, float))
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "terminal", term)

    @property
    def N(self) -> int:
        return self.values.shape[0] - 1

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def check_grid(self, N: int) -> None:
        if self.N != N:
            raise ValidationError(f"targets given at {self.N + 1} nodes, grid has {N + 1}")

    @classmethod
    def from_functions(cls, grid: TimeGrid, **fns: Callable) -> "DesiredData":
        t = grid.nodes
        cols = tuple(fns)
        vals = np.column_stack([np.broadcast_to(np.asarray(fns[c](t), float), t.shape) for c in cols])
        return cls(vals, cols)

    @classmethod
    def from_csv(cls, path, grid: TimeGrid) -> "DesiredData":
        """``t, value`` or ``t, eta, sigma`` columns, linearly interpolated to the nodes."""
        header, rows = read_csv(path)
        if header[0] != "t" or len(header) < 2:
            raise ValidationError(f"{path}: first column must be 't', got {header}")
        table = np.array([[float(x) for x in row] for row in rows])
        t = table[:, 0]
        if np.any(np.diff(t) <= 0):
            raise ValidationError(f"{path}: time column must be strictly increasing")
        nodes = grid.nodes
        tol = 1e-9 * grid.T
        if nodes[0] < t[0] - tol or nodes[-1] > t[-1] + tol:
            raise ValidationError(
                f"{path}: data covers [{t[0]}, {t[-1]}] but grid needs [0, {grid.T}]")
        vals = np.column_stack([np.interp(nodes, t, table[:, k]) for k in range(1, len(header))])
        return cls(vals, tuple(header[1:]))

    @classmethod
    def builtin(cls, name: str, grid: TimeGrid) -> "DesiredData":
        if name == "ou-sine":
            from .models.ou import sine_targets

            tg = sine_targets(grid.T)
            return cls.from_functions(grid, eta=tg.eta, sigma=tg.sigma)
        raise ValidationError(f"unknown built-in target {name!r}")


def _quadrature(res2: np.ndarray, dt: float) -> float:
    """Left-endpoint running sum over nodes 0..N-1 plus the terminal node."""
    return 0.5 * dt * float(np.sum(res2[:-1])) + 0.5 * float(res2[-1])


def regularization(control, kappa: float, dt: float) -> float:
    if control is None or kappa == 0:
        return 0.0
    v = control.values
    return 0.5 * kappa * control.inner(v, v, dt)


class CostSpec:
    """Interface consumed by the adjoint and the optimizer."""

    kappa: float = 0.0
    d: int | None = None

    def value(self, path: EnsemblePath, control=None) -> float:
        raise NotImplementedError

    def sources(self, path: EnsemblePath) -> np.ndarray:
        """``(N+1, M, d)``: running state gradients in rows ``0..N-1``, terminal gradient in row ``N``."""
        raise NotImplementedError

    def state_grad(self, path: EnsemblePath, nu: int, mu: int) -> np.ndarray:
        if not 0 <= nu < path.N:
            raise IndexError(f"running index {nu} outside 0..{path.N - 1}")
        return self.sources(path)[nu, mu]

    def terminal_grad(self, path: EnsemblePath, mu: int) -> np.ndarray:
        return self.sources(path)[path.N, mu]

    def reg_grad(self, control) -> np.ndarray:
        # gradient of (kappa/2)||u||^2 in the control's own inner product
        return self.kappa * control.values


# -- general tracking of C(E[X]) ---------------------------------------------

def _tracking_residuals(path, C, data: DesiredData):
    data.check_grid(path.N)
    means = path_means(path)
    targets = data.values.copy()
    targets[-1] = data.terminal
    res = np.array([np.atleast_1d(C(means[nu])) for nu in range(path.N + 1)]) - targets
    return means, res


def tracking_cost_value(path: EnsemblePath, u, C: Callable, data: DesiredData, kappa: float = 0.0) -> float:
    _, res = _tracking_residuals(path, C, data)
    return _quadrature(np.sum(res**2, axis=1), path.grid.dt) + regularization(u, kappa, path.grid.dt)


def tracking_cost_state_grad(path, nu: int, mu: int, C, C_jac, data) -> np.ndarray:
    """``C'(E[X_nu])^T (C(E[X_nu]) - c_nu)``; identical for every realization ``mu``."""
    if not 0 <= mu < path.M:
        raise IndexError(f"realization {mu} outside 0..{path.M - 1}")
    means, res = _tracking_residuals(path, C, data)
    J = np.atleast_2d(C_jac(means[nu]))
    return J.T @ res[nu]


@dataclass(eq=False)
class TrackingCost(CostSpec):
    C: Callable
    C_jac: Callable
    data: DesiredData
    kappa: float = 0.0

    def value(self, path, control=None):
        return tracking_cost_value(path, control, self.C, self.data, self.kappa)

    def sources(self, path):
        means, res = _tracking_residuals(path, self.C, self.data)
        g = np.array([np.atleast_2d(self.C_jac(means[nu])).T @ res[nu] for nu in range(path.N + 1)])
        return np.broadcast_to(g[:, None, :], (path.N + 1, path.M, path.d))


# -- OU mean/variance tracking -----------------------------------------------

def _ou_moments(path, data: DesiredData):
    if path.d != 1:
        raise ValidationError(f"OU cost needs a scalar state, got d={path.d}")
    data.check_grid(path.N)
    E = path_means(path)[:, 0]
    V = path_variances(path)[:, 0]
    eta, sigma = data.column("eta").copy(), data.column("sigma").copy()
    eta[-1], sigma[-1] = data.terminal[data.columns.index("eta")], data.terminal[data.columns.index("sigma")]
    return E, V, eta, sigma


def ou_cost_value(path: EnsemblePath, U, data: DesiredData, kappa: float = 0.0) -> float:
    E, V, eta, sigma = _ou_moments(path, data)
    return _quadrature((E - eta) ** 2 + (V - sigma) ** 2, path.grid.dt) + regularization(U, kappa, path.grid.dt)


def _ou_sources(path, data):
    E, V, eta, sigma = _ou_moments(path, data)
    X = path.data[:, :, 0]
    src = (E - eta)[:, None] + 2.0 * (V - sigma)[:, None] * (X - E[:, None])
    return src[:, :, None]


def ou_cost_state_grad(path, nu: int, mu: int, data) -> float:
    return float(_ou_sources(path, data)[nu, mu, 0])


@dataclass(eq=False)
class OUCost(CostSpec):
    data: DesiredData
    kappa: float = 0.0
    d: int = 1

    def value(self, path, control=None):
        return ou_cost_value(path, control, self.data, self.kappa)

    def sources(self, path):
        return _ou_sources(path, self.data)


# -- normalized-correlation tracking ------------------------------------------

def corr_cost_value(path: EnsemblePath, data: DesiredData) -> float:
    data.check_grid(path.N)
    corr = path_correlations(path)[0]
    c = data.values[:, 0].copy()
    c[-1] = data.terminal[0]
    return _quadrature((corr - c) ** 2, path.grid.dt)


def _corr_sources(path, data):
    data.check_grid(path.N)
    corr, Y, den = path_correlations(path)
    c = data.values[:, 0].copy()
    c[-1] = data.terminal[0]
    src = np.zeros((path.N + 1, path.M, path.d))
    g = (corr - c)[:, None] * (Y[0][None, :] - 2.0 * corr[:, None] * Y) / den[:, None]
    src[1:, :, 0] = g[1:]
    return src


def corr_cost_state_grad(path, nu: int, mu: int, data) -> np.ndarray:
    return _corr_sources(path, data)[nu, mu]


@dataclass(eq=False)
class CorrelationCost(CostSpec):
    data: DesiredData
    kappa: float = 0.0

    def __post_init__(self):
        if self.kappa != 0:
            raise ValidationError("the correlation cost has no regularization term")

    def value(self, path, control=None):
        return corr_cost_value(path, self.data)

    def sources(self, path):
        return _corr_sources(path, self.data)
