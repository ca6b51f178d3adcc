import math

import numpy as np
import pytest

from sdecal.brownian import sample_increments
from sdecal.errors import InfeasibleTargetError, ValidationError
from sdecal.models import ou as ou_mod
from sdecal.models.ou import (OuParams, OuTargets, ou_continuous_cost, ou_exact_moments,
                              ou_initial_ensemble, ou_model, ou_normal_ensemble,
                              ou_perfect_controls, sine_targets, perfect_control_grid)
from sdecal.models.spt import (SptParams, cold_start, pack_params, spt_equilibrate, spt_model,
                               stationary_tracer_variance, unpack_params)
from sdecal.sde_core import ControlGrid, ControlParam, TimeGrid, em_forward, jacobian_fd_error


# -- OU -----------------------------------------------------------------------------

def test_ou_model_examples():
    m = ou_model(OuParams(theta=1.0))
    x = np.array([[0.0], [2.0]])
    u = np.array([1.0, 0.5])
    np.testing.assert_array_equal(m.drift(x, u, 0.0), [[1.0], [-1.0]])
    np.testing.assert_array_equal(m.diffusion(x, u, 0.0), [[0.5]])
    np.testing.assert_array_equal(m.jac_ax(x, u, 0.0), [[-1.0]])
    np.testing.assert_array_equal(m.jac_au(x, u, 0.0), [[1.0, 0.0]])
    np.testing.assert_array_equal(m.jac_bu(x, u, 0.0), [[[0.0, 1.0]]])
    assert (m.d, m.m, m.r) == (1, 1, 2)


def test_ou_params_validation():
    with pytest.raises(ValidationError):
        OuParams(theta=0.0)
    with pytest.raises(ValidationError):
        OuParams(T=-1.0)


def test_exact_moments_at_zero_and_constant():
    p = OuParams(theta=1.5)
    m, v = ou_exact_moments(p, (0.3, 0.8), 0.5, 0.25, 0.0)
    assert m[0] == 0.5 and v[0] == 0.25
    t = np.array([0.0, 0.5, 3.0])
    m, v = ou_exact_moments(p, (0.3, 0.8), 0.5, 0.25, t)
    np.testing.assert_allclose(m, 0.3 + 0.2 * np.exp(-1.5 * t))
    np.testing.assert_allclose(v, 0.64 / 3 + (0.25 - 0.64 / 3) * np.exp(-3 * t))
    with pytest.raises(ValidationError):
        ou_exact_moments(p, (0.3, 0.8), 0.5, 0.25, -1.0)


def test_exact_moments_paths_agree():
    p = OuParams(theta=1.0, T=2.0)
    t = np.array([1.7, 0.3, 2.0, 0.9])  # unsorted on purpose
    ref = ou_exact_moments(p, (0.3, 0.8), 0.1, 0.4, t)
    fn = ou_exact_moments(p, (lambda s: 0.3 + 0 * s, lambda s: 0.8 + 0 * s), 0.1, 0.4, t)
    grid = ou_exact_moments(p, ControlGrid.constant([0.3, 0.8], 10), 0.1, 0.4, t)
    for a, b, c in zip(ref, fn, grid):
        np.testing.assert_allclose(b, a, rtol=1e-10)
        np.testing.assert_allclose(c, a, rtol=1e-12)


def test_perfect_controls_sine_targets():
    p = OuParams(theta=1.0, T=2 * math.pi)
    tg = sine_targets(p.T)
    u1, u2 = ou_perfect_controls(p, tg, 0.0)
    assert u1 == pytest.approx(0.0, abs=1e-15)
    assert u2 == pytest.approx(math.sqrt(1.2))
    assert u2 == pytest.approx(1.0954, abs=1e-4)
    s = np.linspace(0.0, p.T, 201)
    m, v = ou_exact_moments(p, (lambda t: ou_perfect_controls(p, tg, t)[0],
                                lambda t: ou_perfect_controls(p, tg, t)[1]),
                            float(tg.eta(0.0)), float(tg.sigma(0.0)), s)
    np.testing.assert_allclose(m, tg.eta(s), atol=1e-8)
    np.testing.assert_allclose(v, tg.sigma(s), atol=1e-8)


def test_perfect_controls_constant_targets():
    p = OuParams(theta=2.0)
    tg = OuTargets(lambda t: 0.7 + 0 * t, lambda t: 0 * t, lambda t: 0.5 + 0 * t, lambda t: 0 * t)
    t = np.linspace(0, 1, 5)
    for variant in ("variance-ode", "sqrt-product"):
        u1, u2 = ou_perfect_controls(p, tg, t, variant)
        np.testing.assert_allclose(u1, 0.7)
        np.testing.assert_allclose(u2, math.sqrt(2.0))
    with pytest.raises(ValidationError):
        ou_perfect_controls(p, tg, t, "other")


def test_infeasible_variance_target():
    p = OuParams(theta=1.0)
    tg = OuTargets(lambda t: 0 * t, lambda t: 0 * t, lambda t: 1.0 - 0.9 * t, lambda t: -0.9 + 0 * t)
    with pytest.raises(InfeasibleTargetError):
        ou_perfect_controls(p, tg, np.array([0.0, 0.9]))


def test_perfect_control_grid_and_continuous_cost():
    p = OuParams(T=2 * math.pi)
    tg = sine_targets(p.T)
    U = perfect_control_grid(p, tg, 32)
    assert U.U.shape == (2, 32)
    exact = ou_continuous_cost(p, (lambda t: ou_perfect_controls(p, tg, t)[0],
                                   lambda t: ou_perfect_controls(p, tg, t)[1]),
                               tg, -1.0, 0.6)
    assert exact < 1e-12
    assert ou_continuous_cost(p, (0.0, 1.0), tg, -1.0, 0.6) > 0.1
    assert ou_continuous_cost(p, (0.0, 1.0), tg, -1.0, 0.6, kappa=1.0) == pytest.approx(
        ou_continuous_cost(p, (0.0, 1.0), tg, -1.0, 0.6) + 0.5 * p.T, rel=1e-9)


def test_initial_ensemble_moments():
    x = ou_initial_ensemble(sine_targets(2 * math.pi), 100_000, 3)
    assert x.shape == (100_000, 1)
    assert abs(x.mean() + 1.0) < 0.01 and abs(x.var() - 0.6) < 0.01
    np.testing.assert_array_equal(ou_normal_ensemble(2.0, 0.0, 5, 1), np.full((5, 1), 2.0))
    with pytest.raises(ValidationError):
        ou_normal_ensemble(0.0, -1.0, 5, 1)


# -- SPT ----------------------------------------------------------------------------

def test_spt_equal_positions_and_diffusion():
    p = SptParams(K=2, gamma=(1.0, 2.0, 4.0), kappa_ext=3.0, v0=0.5)
    m = spt_model(p)
    u = pack_params([1.0, 2.0], [1.0, 0.5])
    x = np.zeros((3, 3))
    np.testing.assert_allclose(m.drift(x, u, 0.0), 0.0, atol=1e-15)
    np.testing.assert_allclose(m.drift(x, u, 1.0)[:, 0], 3.0 * 0.5)
    np.testing.assert_array_equal(np.diag(m.diffusion(x, u, 0.0)), [1.0, 0.5, 0.25])
    fdt = spt_model(SptParams(K=1, gamma=(2.0, 8.0), kBT=1.0, noise="fdt"))
    np.testing.assert_allclose(np.diag(fdt.diffusion(x[:, :2], u[:2], 0.0)), [1.0, 0.5])


@pytest.mark.parametrize("K", [1, 2])
def test_spt_jacobians_match_fd(K):
    rng = np.random.default_rng(K)
    p = SptParams(K=K, gamma=tuple(rng.uniform(0.5, 2.0, K + 1)), v0=0.3)
    u = pack_params(rng.uniform(0.5, 1.5, K), rng.uniform(0.5, 2.0, K))
    errs = jacobian_fd_error(spt_model(p), rng.normal(size=(6, K + 1)), u, 0.7)
    assert max(errs.values()) <= 1e-6


def test_spt_param_validation():
    for bad in (dict(K=0), dict(gamma=(1.0, -1.0)), dict(kappa_ext=0.0), dict(kBT=0.0),
                dict(t_eq=-1.0), dict(noise="white"), dict(K=2, gamma=(1.0, 1.0))):
        with pytest.raises(ValidationError):
            SptParams(**bad)
    assert SptParams(K=3, gamma=2.0).gamma == (2.0, 2.0, 2.0, 2.0)
    assert SptParams(K=2).gamma == (1.0, 1.0, 1.0)


def test_pack_round_trip():
    u = pack_params([1.0, 2.0], [0.5, 4.0])
    np.testing.assert_array_equal(u, [1.0, 2.0, 2.0, 0.25])
    V, d = unpack_params(u)
    np.testing.assert_array_equal(V, [1.0, 2.0])
    np.testing.assert_array_equal(d, [0.5, 4.0])
    with pytest.raises(ValidationError):
        pack_params([1.0], [1.0, 2.0])


def test_equilibrate_zero_steps_is_cold_start():
    p = SptParams(K=2, t_eq=0.0)
    x = spt_equilibrate(p, pack_params([1, 1], [1, 1]), 7, 0, 0.01)
    np.testing.assert_array_equal(x, cold_start(p, 7))
    with pytest.raises(ValidationError):
        spt_equilibrate(p, pack_params([1, 1], [1, 1]), 7, 0, 0.0)


@pytest.mark.parametrize("seed", [0, 1])
def test_stationary_tracer_variance_without_interaction(seed):
    p = SptParams(K=1, gamma=(1.0, 1.0), kappa_ext=1.0, t_eq=10.0)
    x = spt_equilibrate(p, pack_params(0.0, 1.0), 10_000, seed, 0.01)
    target = stationary_tracer_variance(p)
    assert target == pytest.approx(0.5)
    assert abs(x[:, 0].var() - target) <= 0.1 * target


def test_tracer_decouples_when_amplitude_vanishes():
    p = SptParams(K=1, gamma=(1.0, 2.0), v0=0.2)
    m = spt_model(p)
    grid = TimeGrid(1.0, 20)
    u = ControlParam(pack_params(0.0, 1.0))
    x0 = np.zeros((4, 2))
    inc = sample_increments(1, 4, 20, 2, grid.dt)
    other = inc.data.copy()
    other[:, :, 1] = sample_increments(2, 4, 20, 2, grid.dt).data[:, :, 1]
    a = em_forward(m, u, x0, inc, grid)
    b = em_forward(m, u, x0, type(inc)(other, grid.dt), grid)
    np.testing.assert_array_equal(a.data[:, :, 0], b.data[:, :, 0])
    assert not np.array_equal(a.data[:, :, 1], b.data[:, :, 1])


def test_spt_backends_agree(monkeypatch):
    p = SptParams(K=2, gamma=(1.0, 3.0, 2.0), v0=0.1)
    grid = TimeGrid(1.0, 50)
    u = ControlParam(pack_params([0.5, 0.8], [1.0, 2.0]))
    x0 = np.random.default_rng(0).normal(size=(30, 3))
    inc = sample_increments(3, 30, 50, 3, grid.dt)
    monkeypatch.setenv("SDECAL_BACKEND", "numba")
    a = em_forward(spt_model(p), u, x0, inc, grid)
    monkeypatch.setenv("SDECAL_BACKEND", "numpy")
    b = em_forward(spt_model(p), u, x0, inc, grid)
    np.testing.assert_allclose(a.data, b.data, rtol=1e-12, atol=1e-12)
