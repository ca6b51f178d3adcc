import numpy as np
import pytest

from sdecal import _backend
from sdecal.brownian import IncrementTensor
from sdecal.sde_core import ModelSpec


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run a test once on each backend."""
    monkeypatch.setenv(_backend.BACKEND_ENV, request.param)
    return request.param


def make_increments(values, dt):
    a = np.asarray(values, dtype=float)
    if a.ndim == 1:
        a = a[None, :, None]
    elif a.ndim == 2:
        a = a[:, :, None]
    return IncrementTensor(a.copy(), dt)


def zero_increments(M, N, m, dt):
    return IncrementTensor(np.zeros((M, N, m)), dt)


def scalar_model(drift, jac_ax=None, jac_au=None, r=1, diffusion=0.0, name="scalar"):
    """d = m = 1 model with constant diffusion ``diffusion``."""
    return ModelSpec(
        d=1, m=1, r=r,
        drift=drift,
        diffusion=lambda x, u, t: np.array([[diffusion]]),
        jac_ax=jac_ax or (lambda x, u, t: np.zeros((1, 1))),
        jac_au=jac_au or (lambda x, u, t: np.zeros((1, r))),
        diffusion_constant=True, name=name)


def control_model():
    """dx = u dt: the drift is the control itself."""
    return scalar_model(lambda x, u, t: np.broadcast_to(u[:1], x.shape).copy(),
                        jac_au=lambda x, u, t: np.array([[1.0]]), name="integrator")


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(capsys):
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(k, ok, detail):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
