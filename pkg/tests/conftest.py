import math

import numpy as np
import pytest

from ensemble_steer.gramian import default_grid
from ensemble_steer.io import load_system

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def scalar_kernel(theta, eta):
    """Closed form of Q for A(theta)=theta, B=1, T=1: (e^x - 1)/x, x = theta + eta."""
    x = theta + eta
    if abs(x) < 1e-6:
        return 1.0 + x / 2 + x * x / 6 + x**3 / 24
    return math.expm1(x) / x


@pytest.fixture(scope="session")
def scalar_exp():
    return load_system("scalar_exp").system


@pytest.fixture(scope="session")
def jordan2():
    return load_system("jordan2").system


@pytest.fixture(scope="session")
def rotation():
    return load_system("rotation").system


@pytest.fixture(scope="session", params=["scalar_exp", "jordan2", "rotation"])
def benchmark(request):
    return load_system(request.param)


@pytest.fixture(scope="session")
def grid():
    return default_grid(load_system("scalar_exp").system)


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


def null_direction(system, moments, grid, rng):
    """Random signal annihilated by every moment functional.

    Removes from white noise its discrete-L2 projection onto the span of the
    adjoint signals, so ``R v (theta_k) = 0`` for all k up to rounding.
    """
    from ensemble_steer.gramian import input_kernel
    from ensemble_steer.model import InputSignal

    K = input_kernel(system, moments.moments, grid)
    N, M, n, m = K.shape
    sw = np.repeat(np.sqrt(grid.weights), m)
    basis = sw[:, None] * K.transpose(1, 3, 0, 2).reshape(M * m, N * n)
    q, r = np.linalg.qr(basis)
    keep = np.abs(np.diag(r)) > 1e-13 * np.abs(r).max()
    q = q[:, keep]
    y = rng.normal(size=M * m)
    y -= q @ (q.T @ y)
    return InputSignal(grid, (y / sw).reshape(M, m))


def resolved_target(spec, grid):
    """The benchmark's target profile, building kernel-generated ones on demand."""
    from ensemble_steer.collocation import KernelTarget

    return spec.target if spec.target is not None else KernelTarget(spec.system, spec.source, grid)
