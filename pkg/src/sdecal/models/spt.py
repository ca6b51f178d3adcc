"""Stochastic Prandtl-Tomlinson bath model.

A tracer (state index 0) sits in a harmonic trap pulled at velocity ``v0``
and interacts with ``K`` bath particles (indices ``1..K``) through cosine
potentials ``V0_k cos(2 pi x / d_k)``. The calibration parameters are packed
as ``u[2k] = V0_k`` and ``u[2k+1] = 1 / d_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import partial

import numpy as np

from ..brownian import sample_increments
from ..errors import ValidationError
from ..sde_core import FusedKernels, ModelSpec, TimeGrid, em_forward
from . import _kernels

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SptParams:
    K: int = 1
    gamma: float | tuple = 1.0
    kappa_ext: float = 1.0
    v0: float = 0.0
    kBT: float = 0.5
    t_eq: float = 10.0
    noise: str = "literal"

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValidationError(f"K must be a positive integer, got {self.K}")
        g = np.atleast_1d(np.asarray(self.gamma, float))
        if g.size not in (1, self.K + 1):
            raise ValidationError(f"need 1 or K+1={self.K + 1} friction coefficients, got {g.size}")
        g = tuple(float(x) for x in np.broadcast_to(g, (self.K + 1,)))
        object.__setattr__(self, "gamma", g)
        if min(g) <= 0:
            raise ValidationError(f"friction coefficients must be positive, got {g}")
        if not self.kappa_ext > 0:
            raise ValidationError(f"kappa_ext must be positive, got {self.kappa_ext}")
        if not self.kBT > 0:
            raise ValidationError(f"kBT must be positive, got {self.kBT}")
        if self.t_eq < 0:
            raise ValidationError(f"t_eq must be nonnegative, got {self.t_eq}")
        if self.noise not in ("literal", "fdt"):
            raise ValidationError(f"noise mode must be 'literal' or 'fdt', got {self.noise!r}")

    @property
    def d(self) -> int:
        return self.K + 1

    @property
    def r(self) -> int:
        return 2 * self.K

    def noise_amplitudes(self) -> np.ndarray:
        g = np.asarray(self.gamma)
        if self.noise == "literal":
            return 1.0 / g
        return np.sqrt(2.0 * self.kBT / g)


def pack_params(V0, dist) -> np.ndarray:
    V0, dist = np.atleast_1d(np.asarray(V0, float)), np.atleast_1d(np.asarray(dist, float))
    if V0.shape != dist.shape:
        raise ValidationError("need one amplitude and one period per bath particle")
    u = np.empty(2 * V0.size)
    u[0::2] = V0
    u[1::2] = 1.0 / dist
    return u


def unpack_params(u):
    u = np.asarray(u, float)
    return u[0::2].copy(), 1.0 / u[1::2]


def _phase(x, u):
    dx = x[:, :1] - x[:, 1:]
    V, q = u[0::2], u[1::2]
    return dx, V, q, TWO_PI * q * dx


def spt_model(p: SptParams) -> ModelSpec:
    gamma = np.asarray(p.gamma, dtype=float)
    g0, gb = gamma[0], gamma[1:]
    kext, v0 = float(p.kappa_ext), float(p.v0)
    b = p.noise_amplitudes()
    B = np.diag(b)
    d, K = p.d, p.K

    def drift(x, u, t):
        dx, V, q, ph = _phase(x, u)
        s = np.sin(ph)
        a = np.empty_like(x)
        a[:, 0] = (-kext * (x[:, 0] - v0 * t) + TWO_PI * np.sum(q * V * s, axis=1)) / g0
        a[:, 1:] = -TWO_PI * q * V * s / gb
        return a

    def diffusion(x, u, t):
        return B

    def jac_ax(x, u, t):
        dx, V, q, ph = _phase(x, u)
        w = 4 * np.pi**2 * q**2 * V * np.cos(ph)
        J = np.zeros((x.shape[0], d, d))
        J[:, 0, 0] = (-kext + w.sum(axis=1)) / g0
        J[:, 0, 1:] = -w / g0
        idx = np.arange(1, d)
        J[:, idx, 0] = -w / gb
        J[:, idx, idx] = w / gb
        return J

    def jac_au(x, u, t):
        dx, V, q, ph = _phase(x, u)
        s, c = np.sin(ph), np.cos(ph)
        dV = TWO_PI * q * s
        dq = TWO_PI * (V * s + TWO_PI * V * q * dx * c)
        J = np.zeros((x.shape[0], d, 2 * K))
        J[:, 0, 0::2] = dV / g0
        J[:, 0, 1::2] = dq / g0
        k = np.arange(K)
        J[:, k + 1, 2 * k] = -dV / gb
        J[:, k + 1, 2 * k + 1] = -dq / gb
        return J

    args = (gamma, kext, v0, b)
    kernels = FusedKernels(
        forward=partial(_kernels.spt_forward, *args),
        adjoint=partial(_kernels.spt_adjoint, *args),
        grad_terms=partial(_kernels.spt_grad_terms, *args),
    )
    return ModelSpec(d=d, m=d, r=2 * K, drift=drift, diffusion=diffusion, jac_ax=jac_ax,
                     jac_au=jac_au, jac_bx=None, jac_bu=None, diffusion_constant=True,
                     name="spt", kernels=kernels)


def cold_start(p: SptParams, M: int) -> np.ndarray:
    """Every particle at the trap center at t=0."""
    return np.zeros((M, p.d))


def spt_equilibrate(p: SptParams, u, M: int, seed: int, dt: float) -> np.ndarray:
    """Relax a cold-start ensemble for ``t_eq`` with the trap held at its t=0 position."""
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    n_eq = int(round(p.t_eq / dt))
    x = cold_start(p, M)
    if n_eq == 0:
        return x
    frozen = spt_model(replace(p, v0=0.0))
    inc = sample_increments(seed, M, n_eq, p.d, dt)
    path = em_forward(frozen, np.broadcast_to(np.asarray(u, float), (n_eq, p.r)), x, inc,
                      TimeGrid(n_eq * dt, n_eq))
    return np.array(path.data[-1])


def stationary_tracer_variance(p: SptParams) -> float:
    """Tracer variance in the trap when all interactions are switched off."""
    b0 = p.noise_amplitudes()[0]
    return b0**2 * p.gamma[0] / (2 * p.kappa_ext)
