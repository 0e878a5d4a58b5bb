import numpy as np
import pytest
from numpy.testing import assert_allclose

from ticmfg.consistent_eq import (
    feedback_best_response,
    lipschitz_estimate,
    policy_distance,
    quadratic_response_location,
    solve_consistent,
    verify_consistent,
)
from ticmfg.mfg_dynamics import FeedbackPolicy, NuGrid, feedback_step_tables, solve_atom_values
from ticmfg.consistent_eq import _interp_nodes
from ticmfg.model import ActionGrid, ModelSpec, WeightedAtoms, quadratic_model, tracking_model


def test_quadratic_fixed_point():
    m = quadratic_model()
    res = solve_consistent(m, nu_grid_k=200, tol=1e-8, max_iter=200)
    assert res.converged and res.iterations <= 200
    assert res.update < 1e-8
    assert res.report.residual <= 1e-10
    assert res.lipschitz <= 1.5 + 2 / 200
    loc = res.policy.locations
    # frozen solver outputs (deterministic pipeline)
    assert loc[0, 100] == pytest.approx(0.4696716348751032, abs=1e-9)
    assert loc[1, 100] == pytest.approx(0.5303283651249020, abs=1e-9)
    assert loc[0, 0] == pytest.approx(0.2199077297561934, abs=1e-9)
    assert loc[1, 200] == pytest.approx(0.7810504825001582, abs=1e-9)
    # actions bracket the myopic vertex (1/2 + nu0)/2 on each side
    vertex = 0.25 + 0.5 * res.policy.nu_grid.points[:, 0]
    assert np.all(loc[0] <= vertex + 1e-12)
    assert np.all(loc[1] >= vertex - 1e-12)


def test_quadratic_matches_closed_form():
    m = quadratic_model()
    res = solve_consistent(m, nu_grid_k=200)
    tables = feedback_step_tables(m, res.policy)
    table = solve_atom_values(m, res.policy, tables=tables)
    V_at_w = _interp_nodes(table.shifted_nodes(), 200, tables[2])
    nodes = res.policy.nu_grid.points
    refined = res.policy.locations
    generic = feedback_best_response(m, res.policy, refine=False).locations
    cell = m.action_grid.points[1] - m.action_grid.points[0]
    for k in range(201):
        for x in range(2):
            closed = quadratic_response_location(m, x, nodes[k][0], V_at_w[:, k])
            assert refined[x, k] == pytest.approx(closed, abs=1e-9)
            assert abs(generic[x, k] - closed) <= cell
    # idempotence at the fixed point
    assert policy_distance(res.policy, feedback_best_response(m, res.policy)) <= 1e-8


def test_tracking_fixed_point_locations():
    m = tracking_model()
    res = solve_consistent(m, nu_grid_k=200, tol=1e-8)
    assert res.converged
    assert res.report.residual <= 1e-12
    loc = res.policy.locations
    # rewards ignore the own state, so both states act identically
    assert_allclose(loc[0], loc[1], atol=0)
    # target-tracking argmax: u* = min(1, 1/(4 nu(1)))
    assert loc[0, 100] == pytest.approx(0.5, abs=1e-12)  # nu(1) = 1/2
    assert loc[0, 180] == 1.0  # nu(1) = 0.2 -> boundary
    # kink falls between grid actions; the refined point lands inside the cell
    assert loc[0, 40] == pytest.approx(0.3116666666666666, abs=1e-9)
    assert abs(loc[0, 40] - 0.3125) < 0.01


def test_verify_flags_bad_policy():
    m = quadratic_model()
    pol = FeedbackPolicy.constant(m.action_grid, NuGrid(100), 0.0)
    rep = verify_consistent(m, pol)
    # the immediate quadratic term alone loses (1/2 + nu0)^2 / 4 >= 1/16
    assert rep.residual >= 0.05
    assert not rep.is_equilibrium(1e-3)


def test_zero_reward_model():
    base = tracking_model()
    m = ModelSpec(
        d=2,
        action_grid=ActionGrid.uniform(0.0, 1.0, 21),
        transition=base.transition,
        transition_vec=base.transition_vec,
        g=lambda x, nu, u: 0.0,
        discount=WeightedAtoms(((0.5, 1.0),)),
        reward_sup=0.0,
        name="zero",
    )
    pol = FeedbackPolicy.constant(m.action_grid, NuGrid(20), 0.7)
    out = feedback_best_response(m, pol)
    # every action ties; canonical selection picks the lowest grid point
    assert_allclose(out.locations, 0.0, atol=0)
    assert verify_consistent(m, pol).residual <= 1e-14


def test_lipschitz_estimate():
    grid = ActionGrid.uniform(0.0, 1.0, 101)
    nu_grid = NuGrid(50)
    assert lipschitz_estimate(FeedbackPolicy.constant(grid, nu_grid, 0.3)) == 0.0
    lin = np.tile((0.5 + nu_grid.points[:, 0]) / 2, (2, 1))
    assert lipschitz_estimate(FeedbackPolicy(grid, nu_grid, dirac_locations=lin)) == pytest.approx(0.5, abs=1e-10)
    rows = np.zeros((2, nu_grid.n_nodes, grid.m))
    rows[:, :, 40] = 1.0
    with pytest.warns(UserWarning):
        assert lipschitz_estimate(FeedbackPolicy(grid, nu_grid, rows=rows)) == 0.0


def test_response_preserves_lipschitz_bound():
    # a 3/2-Lipschitz input maps to an output within 11/8 plus grid slack
    m = quadratic_model()
    nu_grid = NuGrid(200)
    for make in (
        lambda p: 0.25 + 0.5 * p,
        lambda p: np.clip(1.5 * p - 0.2, 0.0, 1.0),
    ):
        loc = np.tile(make(nu_grid.points[:, 0]), (2, 1))
        pol = FeedbackPolicy(m.action_grid, nu_grid, dirac_locations=loc)
        assert lipschitz_estimate(pol) <= 1.5 + 1e-9
        out = feedback_best_response(m, pol)
        assert lipschitz_estimate(out) <= 1.375 + 2 / nu_grid.k


def test_damped_iteration_reaches_same_fixed_point():
    m = quadratic_model()
    full = solve_consistent(m, nu_grid_k=100)
    damped = solve_consistent(m, nu_grid_k=100, damping=0.5)
    assert damped.converged
    assert policy_distance(full.policy, damped.policy) <= 1e-6
    with pytest.raises(ValueError):
        solve_consistent(m, nu_grid_k=100, damping=0.0)


def test_quadratic_response_location_clamps():
    m = quadratic_model()
    assert quadratic_response_location(m, 0, 1.0, np.array([5.0, 0.0])) == 1.0
    assert quadratic_response_location(m, 1, 0.0, np.array([5.0, 0.0])) == 0.0
    assert quadratic_response_location(m, 0, 0.5, np.array([1.0, 1.0])) == pytest.approx(0.5)
