"""Discrete adjoint recursion and reduced-gradient assembly.

``Lam[nu, mu]`` is ``M`` times the partial derivative of the discrete
reduced cost with respect to ``X[nu, mu]``. It is the exact transpose of the
Euler-Maruyama step:

    Lam[N]  = terminal source
    Lam[nu] = Lam[nu+1] + dt a_x^T Lam[nu+1] + sum_j dB[nu, j] b_jx^T Lam[nu+1] + dt source[nu]

and the reduced gradient is assembled from

    G[mu, nu] = dt a_u^T Lam[nu+1] + sum_j dB[nu, j] b_ju^T Lam[nu+1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .csvio import write_csv
from .errors import AdjointBlowupError, ValidationError
from .reduce import det_mean
from .sde_core import (BLOWUP_THRESHOLD, ControlGrid, ControlParam, EnsemblePath,
                       ModelSpec, em_forward, first_bad, per_sample)


@dataclass(frozen=True, eq=False)
class AdjointPath:
    data: np.ndarray  # (N+1, M, d)

    def __post_init__(self):
        self.data.flags.writeable = False


def _steps(control, N):
    return np.ascontiguousarray(control.per_step(N), dtype=float)


def _adjoint_numpy(model: ModelSpec, C, X, dB, src, dt):
    N1, M, d = X.shape
    N = N1 - 1
    L = np.empty_like(X)
    L[N] = src[N]
    with np.errstate(over="ignore", invalid="ignore"):
        for nu in range(N - 1, -1, -1):
            x, u, t = X[nu], C[nu], nu * dt
            lam = L[nu + 1]
            ax = per_sample(model.jac_ax(x, u, t), M, (d, d))
            v = lam + dt * np.einsum("kij,ki->kj", ax, lam) + dt * src[nu]
            if model.jac_bx is not None:
                bx = per_sample(model.jac_bx(x, u, t), M, (model.m, d, d))
                v += np.einsum("kj,kjab,ka->kb", dB[:, nu, :], bx, lam)
            L[nu] = v
            if not np.all(np.abs(v) <= BLOWUP_THRESHOLD):
                L[:nu] = np.nan
                break
    return L


def adjoint_backward(model: ModelSpec, control, path: EnsemblePath, inc, cost) -> AdjointPath:
    C = _steps(control, path.N)
    if inc.data.shape[:2] != (path.M, path.N):
        raise ValidationError("increments do not match the forward path")
    src = np.ascontiguousarray(cost.sources(path), dtype=float)
    k = model.fused()
    if k is not None:
        L = k.adjoint(path.data, C, inc.data, src, path.grid.dt)
    else:
        L = _adjoint_numpy(model, C, path.data, inc.data, src, path.grid.dt)
    bad = first_bad(L[::-1])
    if bad is not None:
        raise AdjointBlowupError(mu=bad[1], nu=path.N - bad[0])
    return AdjointPath(L)


def _grad_terms_numpy(model: ModelSpec, C, X, dB, L, dt):
    N1, M, d = X.shape
    N = N1 - 1
    G = np.empty((M, N, model.r))
    for nu in range(N):
        x, u, t = X[nu], C[nu], nu * dt
        lam = L[nu + 1]
        au = per_sample(model.jac_au(x, u, t), M, (d, model.r))
        g = dt * np.einsum("kir,ki->kr", au, lam)
        if model.jac_bu is not None:
            bu = per_sample(model.jac_bu(x, u, t), M, (model.m, d, model.r))
            g += np.einsum("kj,kjir,ki->kr", dB[:, nu, :], bu, lam)
        G[:, nu, :] = g
    return G


def gradient_terms(model: ModelSpec, control, path: EnsemblePath, adj: AdjointPath, inc) -> np.ndarray:
    """Per-realization, per-step contributions ``(M, N, r)``."""
    C = _steps(control, path.N)
    if adj.data.shape != path.data.shape:
        raise ValidationError(f"adjoint shape {adj.data.shape} != path shape {path.data.shape}")
    k = model.fused()
    if k is not None:
        return k.grad_terms(path.data, C, inc.data, adj.data, path.grid.dt)
    return _grad_terms_numpy(model, C, path.data, inc.data, adj.data, path.grid.dt)


def reduced_gradient_param(model, u: ControlParam, path, adj, inc, kappa: float = 0.0) -> np.ndarray:
    """Euclidean gradient of the discrete reduced cost for a parameter vector."""
    G = gradient_terms(model, u, path, adj, inc)
    return kappa * u.u + det_mean(G.sum(axis=1), axis=0)


def reduced_gradient_grid(model, U: ControlGrid, path, adj, inc, kappa: float = 0.0) -> np.ndarray:
    """Gradient ``(r, N)`` in the dt-weighted inner product of control grids."""
    G = gradient_terms(model, U, path, adj, inc)
    return kappa * U.U + det_mean(G, axis=0).T / path.grid.dt


def reduced_gradient(model, control, path, adj, inc, kappa: float = 0.0) -> np.ndarray:
    if isinstance(control, ControlGrid):
        return reduced_gradient_grid(model, control, path, adj, inc, kappa)
    return reduced_gradient_param(model, control, path, adj, inc, kappa)


@dataclass(frozen=True, eq=False)
class Evaluation:
    cost: float
    gradient: np.ndarray | None
    path: EnsemblePath
    adjoint: AdjointPath | None


def evaluate(model, cost, control, x0, inc, grid, gradient: bool = True) -> Evaluation:
    """Forward solve, cost value and (optionally) adjoint + gradient on one increment set."""
    path = em_forward(model, control, x0, inc, grid)
    J = cost.value(path, control)
    if not gradient:
        return Evaluation(J, None, path, None)
    adj = adjoint_backward(model, control, path, inc, cost)
    g = reduced_gradient(model, control, path, adj, inc, cost.kappa)
    return Evaluation(J, g, path, adj)


def write_gradient_csv(g, filename, meta=None):
    """``component, value`` for parameters, ``component, nu, value`` for grids."""
    g = np.asarray(g)
    if g.ndim == 1:
        rows = ([i + 1, float(v)] for i, v in enumerate(g))
        return write_csv(filename, ["component", "value"], rows, meta)
    rows = ([i + 1, nu, float(g[i, nu])] for i in range(g.shape[0]) for nu in range(g.shape[1]))
    return write_csv(filename, ["component", "nu", "value"], rows, meta)
