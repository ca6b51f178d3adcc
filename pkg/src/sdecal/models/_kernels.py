"""Compiled whole-loop kernels for the built-in models.

Each kernel parallelizes over realizations only; every realization's
arithmetic runs in a fixed order, so results do not depend on the thread
count. The numpy reference for all of them is the generic path in
``sde_core`` / ``adjoint`` driven by the model's vectorized callbacks.
"""

from __future__ import annotations

import math

import numpy as np

from .._backend import njit, prange

TWO_PI = 2.0 * math.pi


# -- Ornstein-Uhlenbeck -----------------------------------------------------

@njit(cache=True, parallel=True)
def ou_forward(theta, x0, C, dB, dt):
    M = x0.shape[0]
    N = C.shape[0]
    X = np.empty((N + 1, M, 1))
    for mu in prange(M):
        x = x0[mu, 0]
        X[0, mu, 0] = x
        for nu in range(N):
            x = x + theta * (C[nu, 0] - x) * dt + C[nu, 1] * dB[mu, nu, 0]
            X[nu + 1, mu, 0] = x
    return X


@njit(cache=True, parallel=True)
def ou_adjoint(theta, X, C, dB, src, dt):
    N = X.shape[0] - 1
    M = X.shape[1]
    L = np.empty_like(X)
    for mu in prange(M):
        lam = src[N, mu, 0]
        L[N, mu, 0] = lam
        for nu in range(N - 1, -1, -1):
            lam = lam - theta * dt * lam + dt * src[nu, mu, 0]
            L[nu, mu, 0] = lam
    return L


@njit(cache=True, parallel=True)
def ou_grad_terms(theta, X, C, dB, L, dt):
    N = X.shape[0] - 1
    M = X.shape[1]
    G = np.empty((M, N, 2))
    for mu in prange(M):
        for nu in range(N):
            lam = L[nu + 1, mu, 0]
            G[mu, nu, 0] = dt * theta * lam
            G[mu, nu, 1] = dB[mu, nu, 0] * lam
    return G


# -- Stochastic Prandtl-Tomlinson ------------------------------------------
# u[2k] is the interaction amplitude of bath particle k, u[2k+1] its inverse
# period. State index 0 is the tracer, 1..K the bath particles.

@njit(cache=True, parallel=True)
def spt_forward(gamma, kext, v0, bdiag, x0, C, dB, dt):
    M, d = x0.shape
    K = d - 1
    N = C.shape[0]
    X = np.empty((N + 1, M, d))
    for mu in prange(M):
        x = x0[mu].copy()
        a = np.empty(d)
        X[0, mu] = x
        for nu in range(N):
            t = nu * dt
            force = -kext * (x[0] - v0 * t)
            for k in range(K):
                V = C[nu, 2 * k]
                q = C[nu, 2 * k + 1]
                s = math.sin(TWO_PI * q * (x[0] - x[k + 1]))
                force += TWO_PI * q * V * s
                a[k + 1] = -TWO_PI * q * V * s / gamma[k + 1]
            a[0] = force / gamma[0]
            for i in range(d):
                x[i] = x[i] + a[i] * dt + bdiag[i] * dB[mu, nu, i]
                X[nu + 1, mu, i] = x[i]
    return X


@njit(cache=True, parallel=True)
def spt_adjoint(gamma, kext, v0, bdiag, X, C, dB, src, dt):
    N = X.shape[0] - 1
    M, d = X.shape[1], X.shape[2]
    K = d - 1
    L = np.empty_like(X)
    fp = 4.0 * math.pi * math.pi
    for mu in prange(M):
        lam = src[N, mu].copy()
        new = np.empty(d)
        L[N, mu] = lam
        for nu in range(N - 1, -1, -1):
            x = X[nu, mu]
            # new = lam + dt * a_x^T lam + dt * src
            acc0 = -kext / gamma[0] * lam[0]
            for k in range(K):
                V = C[nu, 2 * k]
                q = C[nu, 2 * k + 1]
                w = fp * q * q * V * math.cos(TWO_PI * q * (x[0] - x[k + 1]))
                # column 0 of a_x: rows 0 and k+1
                acc0 += w / gamma[0] * lam[0] - w / gamma[k + 1] * lam[k + 1]
                # column k+1 of a_x: rows 0 and k+1
                new[k + 1] = lam[k + 1] + dt * (-w / gamma[0] * lam[0] + w / gamma[k + 1] * lam[k + 1]) \
                    + dt * src[nu, mu, k + 1]
            new[0] = lam[0] + dt * acc0 + dt * src[nu, mu, 0]
            for i in range(d):
                lam[i] = new[i]
                L[nu, mu, i] = new[i]
    return L


@njit(cache=True, parallel=True)
def spt_grad_terms(gamma, kext, v0, bdiag, X, C, dB, L, dt):
    N = X.shape[0] - 1
    M, d = X.shape[1], X.shape[2]
    K = d - 1
    G = np.empty((M, N, 2 * K))
    for mu in prange(M):
        for nu in range(N):
            x = X[nu, mu]
            l0 = L[nu + 1, mu, 0]
            for k in range(K):
                V = C[nu, 2 * k]
                q = C[nu, 2 * k + 1]
                dx = x[0] - x[k + 1]
                s = math.sin(TWO_PI * q * dx)
                c = math.cos(TWO_PI * q * dx)
                lk = L[nu + 1, mu, k + 1]
                dV = TWO_PI * q * s
                dq = TWO_PI * (V * s + TWO_PI * V * q * dx * c)
                G[mu, nu, 2 * k] = dt * (dV / gamma[0] * l0 - dV / gamma[k + 1] * lk)
                G[mu, nu, 2 * k + 1] = dt * (dq / gamma[0] * l0 - dq / gamma[k + 1] * lk)
    return G
