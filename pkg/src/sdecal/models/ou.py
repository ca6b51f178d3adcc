"""Ornstein-Uhlenbeck control problem: dX = theta (u1 - X) dt + u2 dB.

Besides the model itself this module carries the closed-form oracles used
to check the discrete machinery: exact mean/variance trajectories, the
controls that track given mean/variance targets perfectly, and the
continuous reduced cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from typing import Callable

import numpy as np
from scipy.integrate import simpson

from ..brownian import standard_normals
from ..errors import InfeasibleTargetError, ValidationError
from ..sde_core import ControlGrid, FusedKernels, ModelSpec
from . import _kernels


@dataclass(frozen=True)
class OuParams:
    theta: float = 1.0
    T: float = 2 * math.pi

    def __post_init__(self):
        if not self.theta > 0:
            raise ValidationError(f"theta must be positive, got {self.theta}")
        if not self.T > 0:
            raise ValidationError(f"T must be positive, got {self.T}")


@dataclass(frozen=True)
class OuTargets:
    """Mean target ``eta`` and variance target ``sigma`` with their time derivatives."""

    eta: Callable
    deta: Callable
    sigma: Callable
    dsigma: Callable


def sine_targets(T: float) -> OuTargets:
    w = 2 * np.pi / T
    return OuTargets(
        eta=lambda t: np.sin(w * np.asarray(t, float)) - 1.0,
        deta=lambda t: w * np.cos(w * np.asarray(t, float)),
        sigma=lambda t: 0.2 * (np.cos(w * np.asarray(t, float)) + 2.0),
        dsigma=lambda t: -0.2 * w * np.sin(w * np.asarray(t, float)),
    )


def ou_model(p: OuParams) -> ModelSpec:
    theta = float(p.theta)

    def drift(x, u, t):
        return theta * (u[0] - x)

    def diffusion(x, u, t):
        return np.array([[u[1]]])

    def jac_ax(x, u, t):
        return np.array([[-theta]])

    def jac_au(x, u, t):
        return np.array([[theta, 0.0]])

    def jac_bu(x, u, t):
        return np.array([[[0.0, 1.0]]])

    kernels = FusedKernels(
        forward=partial(_kernels.ou_forward, theta),
        adjoint=partial(_kernels.ou_adjoint, theta),
        grad_terms=partial(_kernels.ou_grad_terms, theta),
    )
    return ModelSpec(d=1, m=1, r=2, drift=drift, diffusion=diffusion, jac_ax=jac_ax,
                     jac_au=jac_au, jac_bx=None, jac_bu=jac_bu,
                     diffusion_constant=False, name="ou", kernels=kernels)


def ou_normal_ensemble(mean0: float, var0: float, M: int, seed: int) -> np.ndarray:
    """``(M, 1)`` normal ensemble with the given mean and variance."""
    if var0 < 0:
        raise ValidationError(f"initial variance must be nonnegative, got {var0}")
    z = standard_normals(seed, M, 1, 1)[:, 0, :]
    return float(mean0) + math.sqrt(float(var0)) * z


def ou_initial_ensemble(targets: OuTargets, M: int, seed: int) -> np.ndarray:
    """Normal initial ensemble with mean eta(0) and variance sigma(0)."""
    return ou_normal_ensemble(float(targets.eta(0.0)), float(targets.sigma(0.0)), M, seed)


def _interval_moments(th, f1, f2, mean0, var0, t):
    """Propagate mean/variance across consecutive sorted times.

    Across ``[a, b]`` the exact solution is
    ``m(b) = e^{-th (b-a)} m(a) + th * int_a^b u1(s) e^{th (s-b)} ds`` and
    likewise for the variance with ``2 th`` and ``u2^2``; each interval
    integral uses composite Simpson with at least 10 panels.
    """
    knots = np.concatenate([[0.0], t])
    a, b = knots[:-1], knots[1:]
    width = b - a
    span = max(float(knots[-1]), 1e-300)
    n = max(10, math.ceil(float(width.max(initial=0.0)) / (span / 2000)))
    n += n % 2
    s = a[:, None] + width[:, None] * np.linspace(0.0, 1.0, n + 1)[None, :]
    k1 = np.asarray(f1(s), float) * np.exp(th * (s - b[:, None]))
    k2 = np.asarray(f2(s), float) ** 2 * np.exp(2 * th * (s - b[:, None]))
    i1 = simpson(k1, x=s, axis=1)
    i2 = simpson(k2, x=s, axis=1)
    e1, e2 = np.exp(-th * width), np.exp(-2 * th * width)
    mean = np.empty(t.size)
    var = np.empty(t.size)
    m, v = float(mean0), float(var0)
    for k in range(t.size):
        m = e1[k] * m + th * i1[k]
        v = e2[k] * v + i2[k]
        mean[k], var[k] = m, v
    return mean, var


def ou_exact_moments(p: OuParams, controls, mean0: float, var0: float, t):
    """Exact mean and variance of the continuous OU process at times ``t``.

    ``controls`` is one of

    * a pair of numbers ``(u1, u2)`` (constant controls, closed form),
    * a pair of callables ``(u1(s), u2(s))`` (exact propagation between the
      requested times, composite Simpson inside each interval),
    * a :class:`ControlGrid` on ``[0, p.T]`` (piecewise constant, exact per interval).
    """
    th = p.theta
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValidationError("moment times must be nonnegative")
    if isinstance(controls, ControlGrid):
        return _moments_piecewise(p, controls, mean0, var0, t)
    u1, u2 = controls
    if not callable(u1) and not callable(u2):
        e1, e2 = np.exp(-th * t), np.exp(-2 * th * t)
        mean = e1 * mean0 + u1 * (1 - e1)
        var = e2 * var0 + u2**2 * (1 - e2) / (2 * th)
        return mean, var
    f1 = u1 if callable(u1) else (lambda s, c=u1: np.full_like(s, c))
    f2 = u2 if callable(u2) else (lambda s, c=u2: np.full_like(s, c))
    order = np.argsort(t, kind="stable")
    ts = t[order]
    mean_s, var_s = _interval_moments(th, f1, f2, mean0, var0, ts)
    mean, var = np.empty_like(t), np.empty_like(t)
    mean[order], var[order] = mean_s, var_s
    return mean, var


def _moments_piecewise(p, U: ControlGrid, mean0, var0, t):
    th = p.theta
    N = U.N
    dt = p.T / N
    edges_m = np.empty(N + 1)
    edges_v = np.empty(N + 1)
    edges_m[0], edges_v[0] = mean0, var0
    e1, e2 = math.exp(-th * dt), math.exp(-2 * th * dt)
    for nu in range(N):
        edges_m[nu + 1] = e1 * edges_m[nu] + U.U[0, nu] * (1 - e1)
        edges_v[nu + 1] = e2 * edges_v[nu] + U.U[1, nu] ** 2 * (1 - e2) / (2 * th)
    idx = np.clip(np.floor(t / dt).astype(int), 0, N - 1)
    tau = t - idx * dt
    a1, a2 = np.exp(-th * tau), np.exp(-2 * th * tau)
    mean = a1 * edges_m[idx] + U.U[0, idx] * (1 - a1)
    var = a2 * edges_v[idx] + U.U[1, idx] ** 2 * (1 - a2) / (2 * th)
    return mean, var


def ou_perfect_controls(p: OuParams, targets: OuTargets, t, variant: str = "variance-ode"):
    """Controls whose exact moments follow the targets.

    ``variant="variance-ode"`` uses ``u2^2 = sigma' + 2 theta sigma`` (from
    differentiating the variance formula); ``variant="sqrt-product"`` uses
    ``u2^2 = 2 theta sigma + sqrt(sigma) (sqrt(sigma))'``.
    """
    t = np.asarray(t, dtype=float)
    th = p.theta
    u1 = targets.deta(t) / th + targets.eta(t)
    sig, dsig = np.asarray(targets.sigma(t), float), np.asarray(targets.dsigma(t), float)
    if variant == "variance-ode":
        u2sq = dsig + 2 * th * sig
    elif variant == "sqrt-product":
        if np.any(sig <= 0):
            raise InfeasibleTargetError("variance target must be positive for the sqrt-product variant")
        root = np.sqrt(sig)
        u2sq = 2 * th * sig + root * (dsig / (2 * root))
    else:
        raise ValidationError(f"unknown perfect-control variant {variant!r}")
    if np.any(u2sq < 0):
        bad = np.atleast_1d(t)[np.argmax(np.atleast_1d(u2sq) < 0)]
        raise InfeasibleTargetError(f"variance target needs u2^2 < 0 at t={bad:g}")
    return u1, np.sqrt(u2sq)


def perfect_control_grid(p: OuParams, targets: OuTargets, N: int, variant: str = "variance-ode",
                         lower=-np.inf, upper=np.inf) -> ControlGrid:
    """Perfect controls sampled at the left node of every step."""
    t = np.arange(N) * (p.T / N)
    u1, u2 = ou_perfect_controls(p, targets, t, variant)
    return ControlGrid(np.vstack([u1, u2]), lower, upper)


def ou_continuous_cost(p: OuParams, controls, targets: OuTargets, mean0: float, var0: float,
                       kappa: float = 0.0, n: int = 20000) -> float:
    """Continuous reduced cost: L2 mean/variance tracking, terminal terms, regularization."""
    n += n % 2
    s = np.linspace(0.0, p.T, n + 1)
    mean, var = ou_exact_moments(p, controls, mean0, var0, s)
    eta, sig = np.asarray(targets.eta(s), float), np.asarray(targets.sigma(s), float)
    run = 0.5 * simpson((mean - eta) ** 2 + (var - sig) ** 2, x=s)
    term = 0.5 * (mean[-1] - eta[-1]) ** 2 + 0.5 * (var[-1] - sig[-1]) ** 2
    reg = 0.0
    if kappa:
        if isinstance(controls, ControlGrid):
            reg = 0.5 * kappa * (p.T / controls.N) * float(np.sum(controls.U**2))
        else:
            u1, u2 = controls
            g1 = u1(s) if callable(u1) else np.full_like(s, u1)
            g2 = u2(s) if callable(u2) else np.full_like(s, u2)
            reg = 0.5 * kappa * simpson(g1**2 + g2**2, x=s)
    return float(run + term + reg)
