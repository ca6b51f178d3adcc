import math
from dataclasses import dataclass

import numpy as np
import pytest

from sdecal.adjoint import (adjoint_backward, evaluate, gradient_terms, reduced_gradient,
                            reduced_gradient_grid, reduced_gradient_param, write_gradient_csv)
from sdecal.brownian import derive_seed, sample_increments
from sdecal.cost import CorrelationCost, DesiredData, OUCost, TrackingCost
from sdecal.csvio import read_csv
from sdecal.errors import AdjointBlowupError, ValidationError
from sdecal.models.ou import OuParams, ou_model, ou_normal_ensemble
from sdecal.models.spt import SptParams, pack_params, spt_equilibrate, spt_model
from sdecal.sde_core import ControlGrid, ControlParam, TimeGrid, em_forward
from sdecal.verify import fd_gradient_check

from conftest import control_model, make_increments, scalar_model, zero_increments


@dataclass
class FixedSources:
    """Cost stub returning prescribed adjoint sources."""

    src: np.ndarray
    kappa: float = 0.0

    def value(self, path, control=None):
        return 0.0

    def sources(self, path):
        return np.broadcast_to(self.src, path.data.shape).copy()


def ou_data(eta, sig):
    return DesiredData(np.column_stack([eta, sig]), ("eta", "sigma"))


def test_zero_sources_give_zero_adjoint(backend):
    model = ou_model(OuParams())
    grid = TimeGrid(1.0, 4)
    inc = sample_increments(1, 3, 4, 1, grid.dt)
    u = ControlParam([0.5, 1.0])
    path = em_forward(model, u, np.zeros((3, 1)), inc, grid)
    adj = adjoint_backward(model, u, path, inc, FixedSources(np.zeros(1)))
    assert np.all(adj.data == 0.0)
    g = reduced_gradient(model, u, path, adj, inc, kappa=2.0)
    np.testing.assert_array_equal(g, [1.0, 2.0])
    g1 = reduced_gradient(model, ControlParam([1.0, 1.0]), path, adj, inc, kappa=2.0)
    np.testing.assert_array_equal(g1, [2.0, 2.0])


def test_telescoping_without_dynamics():
    model = scalar_model(lambda x, u, t: np.zeros_like(x), diffusion=1.0)
    N, dt, gval = 5, 0.2, 0.7
    grid = TimeGrid(N * dt, N)
    inc = sample_increments(2, 2, N, 1, dt)
    u = ControlParam([0.0])
    path = em_forward(model, u, np.zeros((2, 1)), inc, grid)
    src = np.full((N + 1, 2, 1), gval)
    src[N] = 0.0
    adj = adjoint_backward(model, u, path, inc, FixedSources(src))
    for nu in range(N + 1):
        np.testing.assert_allclose(adj.data[nu], (N - nu) * dt * gval, rtol=1e-14)


def test_terminal_source_only_propagates_linear_decay():
    th, dt, N = 0.5, 0.1, 3
    model = scalar_model(lambda x, u, t: -th * x, jac_ax=lambda x, u, t: np.array([[-th]]))
    grid = TimeGrid(N * dt, N)
    inc = zero_increments(1, N, 1, dt)
    u = ControlParam([0.0])
    path = em_forward(model, u, np.ones((1, 1)), inc, grid)
    src = np.zeros((N + 1, 1, 1))
    src[N] = 1.0
    adj = adjoint_backward(model, u, path, inc, FixedSources(src))
    np.testing.assert_allclose(adj.data[:, 0, 0], (1 - th * dt) ** np.arange(N, -1, -1))


def test_ou_hand_instance(backend):
    model = ou_model(OuParams(theta=1.0, T=1.0))
    grid = TimeGrid(1.0, 2)
    inc = make_increments([[0.3, -0.2], [-0.1, 0.4]], grid.dt)
    x0 = np.array([[0.1], [-0.2]])
    cost = OUCost(ou_data([0.0, 0.5, 1.0], [0.2, 0.2, 0.2]))
    u = ControlParam([0.4, 0.8])
    rep = fd_gradient_check(model, cost, u, x0, inc, grid, h=1e-6, tol=1e-7)
    assert rep.passed, rep.summary()
    # u1 enters the drift only: hand formula for its gradient component
    ev = evaluate(model, cost, u, x0, inc, grid)
    L = ev.adjoint.data[:, :, 0]
    assert ev.gradient[0] == pytest.approx(np.mean(grid.dt * 1.0 * (L[1] + L[2])), rel=1e-14)
    dB = inc.data[:, :, 0]
    assert ev.gradient[1] == pytest.approx(np.mean(dB[:, 0] * L[1] + dB[:, 1] * L[2]), rel=1e-14)


def test_ou_diffusion_control_row_is_nonzero():
    model = ou_model(OuParams(T=1.0))
    grid = TimeGrid(1.0, 8)
    inc = sample_increments(5, 16, 8, 1, grid.dt)
    x0 = ou_normal_ensemble(0.0, 0.1, 16, 6)
    cost = OUCost(ou_data(np.zeros(9), np.full(9, 0.5)))
    ev = evaluate(model, cost, ControlGrid(np.vstack([np.zeros(8), np.full(8, 0.3)])), x0, inc, grid)
    assert np.all(ev.gradient[1] != 0.0)


def test_gradient_is_linear_in_sources(backend):
    model = ou_model(OuParams(T=1.0))
    grid = TimeGrid(1.0, 6)
    inc = sample_increments(9, 4, 6, 1, grid.dt)
    u = ControlGrid(np.vstack([np.full(6, 0.2), np.full(6, 0.7)]))
    path = em_forward(model, u, np.zeros((4, 1)), inc, grid)
    rng = np.random.default_rng(0)
    s1, s2 = rng.normal(size=path.data.shape), rng.normal(size=path.data.shape)
    def grad(s):
        adj = adjoint_backward(model, u, path, inc, FixedSources(s))
        return reduced_gradient_grid(model, u, path, adj, inc)
    np.testing.assert_allclose(grad(2 * s1 - 3 * s2), 2 * grad(s1) - 3 * grad(s2), atol=1e-12)


def test_grid_gradient_weighted_convention():
    # dx = u dt, J = 1/2 X_N^2: dJ/dU_nu = dt * X_N, gradient in the weighted product = X_N
    model = control_model()
    N, dt = 4, 0.25
    grid = TimeGrid(1.0, N)
    inc = zero_increments(1, N, 1, dt)
    U = ControlGrid(np.array([[1.0, 2.0, 3.0, 4.0]]))
    cost = TrackingCost(lambda x: x, lambda x: np.eye(1), DesiredData(np.r_[U.U[0].cumsum() * 0 * dt, 0.0]))
    path = em_forward(model, U, np.zeros((1, 1)), inc, grid)
    XN = path.data[-1, 0, 0]
    src = np.zeros_like(path.data)
    src[-1] = XN
    adj = adjoint_backward(model, U, path, inc, FixedSources(src))
    g = reduced_gradient_grid(model, U, path, adj, inc)
    np.testing.assert_allclose(g, np.full((1, N), XN))
    G = gradient_terms(model, U, path, adj, inc)
    assert G.shape == (1, N, 1)
    np.testing.assert_allclose(G[0, :, 0], dt * XN)
    gp = reduced_gradient_param(model, ControlParam([2.5]), em_forward(model, ControlParam([2.5]), np.zeros((1, 1)), inc, grid),
                                adjoint_backward(model, ControlParam([2.5]), path, inc, FixedSources(src)), inc)
    assert gp[0] == pytest.approx(N * dt * XN)


def test_spt_tiny_gradient_check(backend):
    p = SptParams(K=1, gamma=(1.0, 1.0), t_eq=2.0)
    grid = TimeGrid(0.5, 8)
    u = ControlParam(pack_params(0.8, 2.0), lower=[0.05, 0.05], upper=[5.0, 5.0])
    x0 = spt_equilibrate(p, u.values, 8, 3, grid.dt)
    inc = sample_increments(4, 8, 8, p.d, grid.dt)
    cost = CorrelationCost(DesiredData(np.exp(-grid.nodes)))
    rep = fd_gradient_check(spt_model(p), cost, u, x0, inc, grid, h=1e-6, tol=1e-5)
    assert rep.l2_rel_error <= 1e-5, rep.summary()


def test_spt_two_bath_particles_gradient_check():
    p = SptParams(K=2, gamma=(1.0, 2.0, 3.0), t_eq=1.0)
    grid = TimeGrid(0.4, 8)
    u = ControlParam(pack_params([0.7, 0.4], [2.0, 3.0]), lower=0.05, upper=5.0)
    x0 = spt_equilibrate(p, u.values, 12, 7, grid.dt)
    inc = sample_increments(8, 12, 8, p.d, grid.dt)
    cost = CorrelationCost(DesiredData(np.exp(-grid.nodes)))
    rep = fd_gradient_check(spt_model(p), cost, u, x0, inc, grid, h=1e-6, tol=1e-5)
    assert rep.l2_rel_error <= 1e-5, rep.summary()


def test_backends_agree_on_gradient(monkeypatch):
    p = SptParams(K=1, gamma=(1.0, 3.0), t_eq=1.0)
    grid = TimeGrid(1.0, 32)
    u = ControlParam(pack_params(1.0, 2.0))
    x0 = spt_equilibrate(p, u.values, 50, 1, grid.dt)
    inc = sample_increments(2, 50, 32, p.d, grid.dt)
    cost = CorrelationCost(DesiredData(np.exp(-grid.nodes)))
    out = {}
    for b in ("numba", "numpy"):
        monkeypatch.setenv("SDECAL_BACKEND", b)
        out[b] = evaluate(spt_model(p), cost, u, x0, inc, grid)
    assert out["numba"].cost == pytest.approx(out["numpy"].cost, rel=1e-12)
    np.testing.assert_allclose(out["numba"].gradient, out["numpy"].gradient, rtol=1e-10)


def test_adjoint_blowup_reports_location():
    model = scalar_model(lambda x, u, t: np.zeros_like(x), jac_ax=lambda x, u, t: np.array([[1e30]]))
    grid = TimeGrid(1.0, 4)
    inc = zero_increments(2, 4, 1, grid.dt)
    u = ControlParam([0.0])
    path = em_forward(model, u, np.zeros((2, 1)), inc, grid)
    src = np.zeros_like(path.data)
    src[-1] = 1.0
    with pytest.raises(AdjointBlowupError) as ei:
        adjoint_backward(model, u, path, inc, FixedSources(src))
    assert ei.value.nu is not None


def test_mismatched_increments_rejected():
    model = ou_model(OuParams(T=1.0))
    grid = TimeGrid(1.0, 4)
    u = ControlParam([0.0, 1.0])
    inc = sample_increments(1, 3, 4, 1, grid.dt)
    path = em_forward(model, u, np.zeros((3, 1)), inc, grid)
    with pytest.raises(ValidationError):
        adjoint_backward(model, u, path, sample_increments(1, 3, 5, 1, 0.2), FixedSources(np.zeros(1)))


def _rows(f):
    head, rows = read_csv(f)
    return head, np.array(rows, dtype=float), f.read_text().splitlines()[-1]


def test_gradient_csv(tmp_path):
    f = tmp_path / "g.csv"
    write_gradient_csv(np.array([1.5, -2.0]), f, {"seed": 3})
    head, rows, last = _rows(f)
    assert head == ["component", "value"] and last == "# seed=3"
    np.testing.assert_allclose(rows, [[1, 1.5], [2, -2.0]])
    write_gradient_csv(np.arange(6.0).reshape(2, 3), f)
    head, rows, _ = _rows(f)
    assert head == ["component", "nu", "value"] and rows.shape == (6, 3)
    assert rows[4].tolist() == [2, 1, 4.0]
