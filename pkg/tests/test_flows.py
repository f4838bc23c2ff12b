import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import resolved_target
from ensemble_steer.collocation import minimal_norm_input, moment_vector, solve_collocation
from ensemble_steer.errors import DivergenceError, InvalidInputError
from ensemble_steer.flows import (
    EtaSchedule,
    MomentOperators,
    agent_rhs,
    averaging_flow,
    averaging_rhs,
    consensus_rhs,
    project_consensus,
    projection_agents_rhs,
    projection_Mi,
    strong_flow,
    weak_flow,
)
from ensemble_steer.gramian import MomentGrid, default_grid, reach_many, reachability_apply
from ensemble_steer.io import load_system
from ensemble_steer.model import InputSignal

F2 = np.ones(2)


@pytest.fixture(scope="module")
def two_moments(scalar_exp):
    return MomentGrid(np.array([0.0, 1.0]), scalar_exp.interval)


@pytest.fixture(scope="module")
def ops2(scalar_exp, two_moments, grid):
    return MomentOperators(scalar_exp, two_moments, F2, grid)


@pytest.fixture(scope="module")
def u_par(scalar_exp, two_moments, grid):
    return solve_collocation(scalar_exp, two_moments, F2, grid).input


def affine_parts(rhs, dim):
    b = rhs(np.zeros(dim))
    L = np.column_stack([rhs(e) - b for e in np.eye(dim)])
    return L, b


def exact_affine(L, b, y0, t):
    d = L.shape[0]
    aug = np.zeros((d + 1, d + 1))
    aug[:d, :d], aug[:d, d] = L, b
    return (scipy.linalg.expm(t * aug) @ np.append(y0, 1.0))[:d]


# schedule

def test_eta_values():
    eta = EtaSchedule(1.0, 1.0)
    assert eta(0.0) == 1.0 and eta(3.0) == 0.25
    assert math.isclose(EtaSchedule(2.0, 0.5)(3.0), 1.0)


@pytest.mark.parametrize("c,p", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, 1.5)])
def test_eta_validation(c, p):
    with pytest.raises(InvalidInputError):
        EtaSchedule(c, p)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 10), st.floats(1e-3, 1.0), st.floats(0, 1e3), st.floats(0, 1e3))
def test_eta_nonincreasing(c, p, t1, t2):
    eta = EtaSchedule(c, p)
    lo, hi = sorted((t1, t2))
    assert eta(hi) <= eta(lo)


# projections

def test_projection_fixed_point(scalar_exp, grid):
    g = minimal_norm_input(scalar_exp, 0.4, [2.0], grid) + InputSignal(grid, np.zeros(len(grid)))
    out = projection_Mi(scalar_exp, 0.4, [2.0], g)
    np.testing.assert_allclose(out.samples, g.samples, atol=1e-10)


def test_projection_of_zero(rotation, grid):
    out = projection_Mi(rotation, 0.7, [1.0, -2.0], InputSignal.zeros(grid, 2))
    expect = minimal_norm_input(rotation, 0.7, [1.0, -2.0], grid)
    np.testing.assert_allclose(out.samples, expect.samples, rtol=1e-12, atol=1e-13)


def test_projection_properties(rotation, grid, rng):
    for _ in range(5):
        g = InputSignal(grid, rng.normal(size=(len(grid), 2)))
        f = rng.normal(size=2)
        p = projection_Mi(rotation, 0.3, f, g)
        np.testing.assert_allclose(reachability_apply(rotation, p, 0.3), f, atol=1e-10)
        np.testing.assert_allclose(projection_Mi(rotation, 0.3, f, p).samples, p.samples, atol=1e-10)
        # the correction g - P g is orthogonal to the direction space {R u = 0}
        v = InputSignal(grid, rng.normal(size=(len(grid), 2)))
        w = projection_Mi(rotation, 0.3, np.zeros(2), v)
        assert abs((g - p).inner(w)) < 1e-9 * max(1.0, g.norm() * w.norm())


def test_consensus_projection_idempotent(rng):
    U = rng.normal(size=(4, 10))
    P = project_consensus(U)
    np.testing.assert_array_equal(project_consensus(P), P)
    np.testing.assert_allclose(P.sum(axis=0), U.sum(axis=0))


# right-hand sides

@pytest.mark.parametrize("eta", [0.0, 0.3])
def test_stacked_matches_agentwise(ops2, rng, eta):
    U = rng.normal(size=(2, ops2.D))
    stacked = consensus_rhs(ops2, U, eta)
    for i in range(2):
        np.testing.assert_allclose(stacked[i], agent_rhs(ops2, U, i, eta), rtol=1e-12, atol=1e-12)


def test_averaging_is_mean_of_projection_agents(ops2, rng):
    U = rng.normal(size=(2, ops2.D))
    lhs = projection_agents_rhs(ops2, U).mean(axis=0)
    np.testing.assert_allclose(lhs, averaging_rhs(ops2, U.mean(axis=0)), rtol=1e-10, atol=1e-10)


def test_averaging_gradient_form(ops2, rng):
    # with S_i = W_i^{-1/2}: z' = -sum_i R_i* S_i S_i (R_i z - f_i)
    S = np.stack([scipy.linalg.sqrtm(Wi).real for Wi in ops2.Winv])
    np.testing.assert_allclose(S @ S, ops2.Winv, rtol=1e-10)
    z = rng.normal(size=ops2.D)
    r = ops2.R_all(z) - ops2.f
    grad = sum(ops2.Ks[i] @ (S[i] @ (S[i] @ r[i])) for i in range(ops2.N))
    np.testing.assert_allclose(-grad, averaging_rhs(ops2, z), rtol=1e-10, atol=1e-12)


def test_weak_rk4_matches_exact_solution(scalar_exp, two_moments, grid, ops2):
    D = ops2.D
    L, b = affine_parts(lambda y: consensus_rhs(ops2, y.reshape(2, D)).reshape(-1), 2 * D)
    y0 = ops2.moment_inputs().reshape(-1)
    exact = exact_affine(L, b, y0, 5.0).reshape(2, D)
    rep = weak_flow(scalar_exp, two_moments, F2, grid, t_final=5.0, step=0.01, tol=1e-300)
    got = np.stack([a.samples.reshape(-1) for a in rep.final_state.agents])
    np.testing.assert_allclose(got, exact, atol=1e-9)


def test_averaging_rk4_matches_exact_solution(scalar_exp, two_moments, grid, ops2):
    L, b = affine_parts(lambda z: averaging_rhs(ops2, z), ops2.D)
    z0 = ops2.moment_inputs().mean(axis=0)
    rep = averaging_flow(scalar_exp, two_moments, F2, grid, t_final=5.0, step=0.01, tol=1e-300)
    np.testing.assert_allclose(rep.final_input.samples.reshape(-1), exact_affine(L, b, z0, 5.0), atol=1e-9)


# flow runs

def test_single_moment_stationary(scalar_exp, grid):
    mg = MomentGrid(np.array([0.5]), scalar_exp.interval)
    rep = weak_flow(scalar_exp, mg, [1.5], grid, t_final=10.0, step=0.05, tol=1e-300)
    assert rep.max_residual.max() < 1e-9
    assert rep.spread.max() == 0.0


def test_zero_target_stays_zero(rotation, grid):
    mg = MomentGrid.equidistant(rotation.interval, 3)
    for flow in (weak_flow, strong_flow, averaging_flow):
        rep = flow(rotation, mg, np.zeros(6), grid, t_final=1.0, step=0.1, tol=1e-300)
        assert all(not np.any(a.samples) for a in rep.final_state.agents)


def test_single_moment_strong_residual_vanishes(scalar_exp, grid):
    mg = MomentGrid(np.array([0.0]), scalar_exp.interval)
    res = []
    for T in (100.0, 400.0):
        rep = strong_flow(scalar_exp, mg, [1.0], grid, t_final=T, step=0.1, tol=1e-300)
        res.append(rep.max_residual[-1])
    # the bias tracks eta(t)
    assert res[1] < res[0] / 3.5


def test_weak_flow_long_horizon(scalar_exp, two_moments, grid, u_par):
    rep = weak_flow(scalar_exp, two_moments, F2, grid, t_final=800.0, step=0.05)
    assert rep.converged and rep.max_residual[-1] < 1e-6
    assert (rep.final_input - u_par).norm() < 1e-4
    assert rep.spread_monotone_tail()


def test_averaging_flow_long_horizon(scalar_exp, two_moments, grid, u_par):
    rep = averaging_flow(scalar_exp, two_moments, F2, grid, t_final=600.0, step=0.05)
    assert rep.converged and rep.max_residual[-1] < 1e-6
    assert (rep.final_input - u_par).norm() < 1e-4


def test_strong_flow_decays_like_eta(scalar_exp, two_moments, grid):
    res = []
    for T in (200.0, 800.0):
        rep = strong_flow(scalar_exp, two_moments, F2, grid, t_final=T, step=0.05)
        res.append(rep.max_residual[-1])
    assert res[1] < res[0] / 3


def test_strong_start_index(scalar_exp, two_moments, grid):
    rep = strong_flow(scalar_exp, two_moments, F2, grid, t_final=0.05, step=0.05, start_index=1)
    assert rep.spread[0] == 0.0
    with pytest.raises(InvalidInputError):
        strong_flow(scalar_exp, two_moments, F2, grid, start_index=2)


def test_full_agents_mean_matches_closed_equation(scalar_exp, two_moments, grid):
    rep = averaging_flow(scalar_exp, two_moments, F2, grid, t_final=20.0, step=0.05, full_agents=True)
    assert rep.mean_deviation < 1e-8


def test_divergence_guard(scalar_exp, two_moments, grid):
    with pytest.raises(DivergenceError):
        weak_flow(scalar_exp, two_moments, F2, grid, t_final=50.0, step=3.0)


def test_parameter_validation(scalar_exp, two_moments):
    with pytest.raises(InvalidInputError):
        weak_flow(scalar_exp, two_moments, F2, step=0.0)
    with pytest.raises(InvalidInputError):
        averaging_flow(scalar_exp, two_moments, np.ones(3))


def test_report_rows(scalar_exp, two_moments, grid):
    rep = weak_flow(scalar_exp, two_moments, F2, grid, t_final=1.0, step=0.1, log_every=2)
    rows = rep.rows()
    assert rows.shape[1] == 4
    assert np.all(np.diff(rows[:, 0]) > 0) and rows[-1, 0] == pytest.approx(1.0)


@pytest.mark.parametrize("name", ["jordan2", "rotation"])
def test_cross_method_agreement(name):
    spec = load_system(name)
    system = spec.system
    grid = default_grid(system)
    mg = MomentGrid.equidistant(system.interval, 2)
    F = moment_vector(resolved_target(spec, grid), mg)
    u_par = solve_collocation(system, mg, F, grid).input
    for flow in (weak_flow, averaging_flow):
        rep = flow(system, mg, F, grid, t_final=1000.0, step=0.05)
        assert rep.converged
        assert np.abs(reach_many(system, rep.final_input, mg.moments) - F.blocks()).max() < 1e-6
        assert (rep.final_input - u_par).norm() < 1e-4


def test_strong_spread_tail_monotone(scalar_exp, two_moments, grid):
    rep = strong_flow(scalar_exp, two_moments, F2, grid, t_final=20.0, step=0.05)
    assert rep.spread_monotone_tail()


def test_logged_residual_matches_recomputation(scalar_exp, two_moments, grid):
    rep = weak_flow(scalar_exp, two_moments, F2, grid, t_final=3.0, step=0.05)
    direct = np.abs(reach_many(scalar_exp, rep.final_input, two_moments.moments)[:, 0] - 1.0).max()
    assert abs(rep.max_residual[-1] - direct) < 1e-10
    own = np.array([abs(reachability_apply(scalar_exp, a, th)[0] - 1.0)
                    for a, th in zip(rep.final_state.agents, two_moments.moments)])
    np.testing.assert_allclose(rep.final_state.residuals, own, atol=1e-10)
