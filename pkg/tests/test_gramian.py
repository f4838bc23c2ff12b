import math
import threading
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import scalar_kernel
from ensemble_steer.errors import IllConditionedGramianError, IncompatibleGridError
from ensemble_steer.gramian import (
    MomentGrid,
    adjoint_apply,
    block_gramian,
    default_grid,
    gramian,
    kernel_Q,
    reachability_apply,
)
from ensemble_steer.model import EnsembleSystem, InputSignal, ParameterInterval, TimeGrid


def zero_drift(n, T=1.0):
    B = [[[1.0 if i == j else 0.0] for j in range(n)] for i in range(n)]
    A = [[[0.0] for _ in range(n)] for _ in range(n)]
    return EnsembleSystem.from_entries(A, B, T, (0.0, 1.0))


def random_poly_system(rng, n, m, deg=2):
    A = rng.normal(scale=0.7, size=(n, n, deg + 1))
    B = rng.normal(size=(n, m, deg + 1))
    return EnsembleSystem(A, B, 1.0, ParameterInterval(0.0, 1.0))


def test_reach_constant_input_zero_drift():
    sys_ = zero_drift(3, T=2.0)
    g = default_grid(sys_)
    c = np.array([1.0, -2.0, 0.5])
    u = InputSignal(g, np.tile(c, (len(g), 1)))
    np.testing.assert_allclose(reachability_apply(sys_, u, 0.3), 2.0 * c, rtol=1e-14)


def test_reach_scalar_closed_form(scalar_exp, grid):
    u = InputSignal(grid, np.ones(len(grid)))
    assert math.isclose(reachability_apply(scalar_exp, u, 1.0)[0], math.e - 1, rel_tol=1e-13)


def test_reach_zero_input(rotation, grid):
    assert not np.any(reachability_apply(rotation, InputSignal.zeros(grid, 2), 0.4))


def test_reach_grid_mismatch(scalar_exp):
    g = TimeGrid.gauss_legendre(2.0, 4, 4)
    with pytest.raises(IncompatibleGridError):
        reachability_apply(scalar_exp, InputSignal(g, np.ones(16)), 0.5)


def test_adjoint_examples(rotation, grid):
    assert not np.any(adjoint_apply(rotation, np.zeros(2), 0.5, grid).samples)
    sys_ = zero_drift(2)
    sig = adjoint_apply(sys_, [3.0, -1.0], 0.2, grid)
    np.testing.assert_array_equal(sig.samples, np.tile([3.0, -1.0], (len(grid), 1)))


def test_adjoint_identity(benchmark, grid, rng):
    system = benchmark.system
    for _ in range(20):
        theta = rng.uniform(0, 1)
        u = InputSignal(grid, rng.normal(size=(len(grid), system.m)))
        v = rng.normal(size=system.n)
        lhs = reachability_apply(system, u, theta) @ v
        rhs = u.inner(adjoint_apply(system, v, theta, grid))
        assert math.isclose(lhs, rhs, rel_tol=1e-9, abs_tol=1e-9)


def test_gramian_zero_drift():
    sys_ = zero_drift(1, T=2.0)
    assert math.isclose(gramian(sys_, 0.5)[0, 0], 2.0, rel_tol=1e-14)


def test_gramian_jordan(jordan2):
    # e^{A(1-s)} B = [1-s, 1]; integrate the outer product exactly
    exact = np.array([[Fraction(1, 3), Fraction(1, 2)], [Fraction(1, 2), Fraction(1)]], dtype=float)
    np.testing.assert_allclose(gramian(jordan2, 0.7), exact, rtol=0, atol=1e-14)


def test_gramian_scalar(scalar_exp):
    assert math.isclose(gramian(scalar_exp, 1.0)[0, 0], (math.e**2 - 1) / 2, rel_tol=1e-13)


def test_kernel_closed_form(scalar_exp, grid, rng):
    assert math.isclose(kernel_Q(scalar_exp, 0.5, 0.5, grid)[0, 0], math.e - 1, rel_tol=1e-13)
    for theta, eta in rng.uniform(0, 1, size=(30, 2)):
        assert math.isclose(kernel_Q(scalar_exp, theta, eta, grid)[0, 0],
                            scalar_kernel(theta, eta), rel_tol=1e-12)


def test_scalar_kernel_oracle_series_branch():
    assert scalar_kernel(0.0, 0.0) == 1.0
    assert math.isclose(scalar_kernel(1e-7, 0.0), math.expm1(1e-7) / 1e-7, rel_tol=1e-15)


def test_kernel_zero_drift():
    sys_ = zero_drift(2, T=3.0)
    np.testing.assert_allclose(kernel_Q(sys_, 0.1, 0.9), 3.0 * np.eye(2), rtol=1e-14)


def test_kernel_transpose_symmetry(rng):
    for _ in range(5):
        sys_ = random_poly_system(rng, 3, 2)
        np.testing.assert_allclose(kernel_Q(sys_, 0.2, 0.7), kernel_Q(sys_, 0.7, 0.2).T,
                                   rtol=0, atol=1e-12 * np.abs(kernel_Q(sys_, 0.2, 0.7)).max())


def test_block_single_moment(rotation, grid):
    mg = MomentGrid(np.array([0.3]), rotation.interval)
    np.testing.assert_allclose(block_gramian(rotation, mg, grid).matrix, gramian(rotation, 0.3, grid),
                               rtol=1e-15)


@pytest.mark.parametrize("N", [2, 3, 5])
def test_block_zero_drift_is_degenerate(N):
    sys_ = zero_drift(2)
    with pytest.raises(IllConditionedGramianError) as info:
        block_gramian(sys_, MomentGrid.equidistant(sys_.interval, N))
    assert info.value.condition > 1e14


def test_block_scalar_two_moments(scalar_exp, grid):
    Q = block_gramian(scalar_exp, MomentGrid(np.array([0.0, 1.0]), scalar_exp.interval), grid)
    e = math.e
    np.testing.assert_allclose(Q.matrix, [[1, e - 1], [e - 1, (e * e - 1) / 2]], rtol=1e-13)
    assert Q.condition > 1


def test_block_symmetric_and_pd(rotation, grid):
    for N in (2, 4):
        bg = block_gramian(rotation, MomentGrid.equidistant(rotation.interval, N), grid)
        np.testing.assert_array_equal(bg.matrix, bg.matrix.T)
        assert np.min(np.diag(bg.factor)) > 0


def test_ridge_is_opt_in(scalar_exp, grid):
    mg = MomentGrid.equidistant(scalar_exp.interval, 8)
    with pytest.raises(IllConditionedGramianError):
        block_gramian(scalar_exp, mg, grid)
    bg = block_gramian(scalar_exp, mg, grid, ridge=1e-6)
    assert bg.ridge == 1e-6


def test_factor_computed_once(scalar_exp, grid):
    bg = block_gramian(scalar_exp, MomentGrid.equidistant(scalar_exp.interval, 3), grid)
    seen = []
    threads = [threading.Thread(target=lambda: seen.append(bg.factor)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(f is seen[0] for f in seen)
    np.testing.assert_allclose(seen[0] @ seen[0].T, bg.matrix, rtol=1e-13)


def test_reproducing_property(benchmark, grid, rng):
    system = benchmark.system
    for _ in range(10):
        theta, eta = rng.uniform(0, 1, 2)
        v = rng.normal(size=system.n)
        u = adjoint_apply(system, v, eta, grid)
        np.testing.assert_allclose(reachability_apply(system, u, theta),
                                   kernel_Q(system, theta, eta, grid) @ v, rtol=1e-9, atol=1e-9)


def test_isometry(benchmark, grid, rng):
    system = benchmark.system
    for _ in range(10):
        e1, e2 = rng.uniform(0, 1, 2)
        v1, v2 = rng.normal(size=(2, system.n))
        lhs = adjoint_apply(system, v1, e1, grid).inner(adjoint_apply(system, v2, e2, grid))
        assert math.isclose(lhs, v1 @ kernel_Q(system, e1, e2, grid) @ v2, rel_tol=1e-9, abs_tol=1e-9)


def test_quadrature_converged(benchmark):
    system = benchmark.system
    coarse = default_grid(system)
    fine = default_grid(system, panels=64)
    for theta, eta in [(0.0, 0.0), (0.3, 0.8), (1.0, 1.0)]:
        diff = kernel_Q(system, theta, eta, coarse) - kernel_Q(system, theta, eta, fine)
        assert np.abs(diff).max() < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=6, unique=True))
def test_block_gramian_psd(thetas):
    from ensemble_steer.gramian import assemble_block_gramian
    from ensemble_steer.io import load_system

    system = load_system("rotation").system
    mg = MomentGrid(np.sort(np.array(thetas)), system.interval)
    Q = assemble_block_gramian(system, mg, default_grid(system))
    assert np.array_equal(Q, Q.T)
    assert np.linalg.eigvalsh(Q).min() > -1e-12 * np.abs(Q).max()
