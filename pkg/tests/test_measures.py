import numpy as np
import pytest
from numpy.testing import assert_allclose

from ticmfg.measures import (
    RelaxedAction,
    argmax_with_ties,
    dirac,
    dirac_point,
    integrate_reward,
    integrate_transition,
    transition_matrix,
    wasserstein1,
)
from ticmfg.model import ActionGrid, tracking_model


GRID = ActionGrid.uniform(0.0, 1.0, 101)


def mix(grid, pairs):
    w = np.zeros(grid.m)
    for u, p in pairs:
        w[grid.nearest_index(u)] += p
    return RelaxedAction(grid, weights=w)


def test_dirac_snapping():
    assert dirac(GRID, 0.503).support()[0][0] == pytest.approx(0.5)
    g5 = ActionGrid.uniform(0.0, 1.0, 5)
    # equidistant -> lower grid point
    assert dirac(g5, 0.375).support()[0][0] == 0.25
    assert dirac_point(GRID, 0.503).point == 0.503
    with pytest.raises(ValueError):
        dirac_point(GRID, 1.2)
    with pytest.raises(ValueError):
        RelaxedAction(GRID, weights=np.ones(GRID.m))  # mass 101


def test_wasserstein_hand_values():
    half_half = mix(GRID, [(0.0, 0.5), (1.0, 0.5)])
    assert wasserstein1(dirac(GRID, 0.0), half_half) == pytest.approx(0.5, abs=1e-15)
    assert wasserstein1(dirac_point(GRID, 0.3), dirac_point(GRID, 0.8)) == pytest.approx(0.5)
    # mixed representations agree with |a - b|
    assert wasserstein1(dirac(GRID, 0.5), dirac_point(GRID, 0.475)) == pytest.approx(0.025)


def test_wasserstein_metric_axioms():
    rng = np.random.default_rng(7)
    actions = []
    for _ in range(6):
        w = rng.random(GRID.m)
        actions.append(RelaxedAction(GRID, weights=w / w.sum()))
    actions += [dirac_point(GRID, 0.123), dirac(GRID, 0.9)]
    for a in actions:
        assert wasserstein1(a, a) <= 1e-15
        for b in actions:
            assert wasserstein1(a, b) == pytest.approx(wasserstein1(b, a), abs=1e-14)
            for c in actions:
                lhs = wasserstein1(a, c)
                assert lhs <= wasserstein1(a, b) + wasserstein1(b, c) + 1e-12


def test_wasserstein_dual_lower_bound():
    # |integral of any 1-Lipschitz test function| can never exceed W1
    rng = np.random.default_rng(11)
    w1 = rng.random(GRID.m)
    w2 = rng.random(GRID.m)
    a = RelaxedAction(GRID, weights=w1 / w1.sum())
    b = RelaxedAction(GRID, weights=w2 / w2.sum())
    dist = wasserstein1(a, b)
    best = 0.0
    for _ in range(200):
        slopes = rng.uniform(-1, 1, GRID.m - 1)
        f = np.concatenate([[0.0], np.cumsum(slopes * np.diff(GRID.points))])
        best = max(best, abs(f @ a.weights - f @ b.weights))
    assert best <= dist + 1e-12
    # the optimal potential f(u) = u is attained for ordered measures
    shifted = mix(GRID, [(0.2, 1.0)])
    base = mix(GRID, [(0.6, 1.0)])
    assert wasserstein1(base, shifted) == pytest.approx(0.4, abs=1e-15)


def test_integration_hand_values():
    m = tracking_model()
    nu = np.array([0.5, 0.5])
    both_ends = mix(m.action_grid, [(0.0, 0.5), (1.0, 0.5)])
    # g(u=0) = 1 - 1/4, g(u=1) = 1 - |1/2 - 1/4|
    assert integrate_reward(m, 0, 0, nu, both_ends) == pytest.approx(0.75)
    row = integrate_transition(m, 0, nu, both_ends)
    assert_allclose(row, [0.5, 0.5], atol=1e-15)
    # point-mass path matches the plain reward
    assert integrate_reward(m, 1, 1, nu, dirac_point(m.action_grid, 0.25)) == pytest.approx(
        (7 / 24) * (1 - abs(0.5 * 0.25 - 0.25))
    )


def test_transition_matrix_stochastic():
    m = tracking_model()
    nu = np.array([0.3, 0.7])
    acts = [dirac(m.action_grid, 0.2), mix(m.action_grid, [(0.4, 0.25), (1.0, 0.75)])]
    P = transition_matrix(m, nu, acts)
    assert P.shape == (2, 2)
    assert_allclose(P.sum(axis=1), 1.0, atol=1e-14)
    assert_allclose(P[0], integrate_transition(m, 0, nu, acts[0]), atol=1e-15)
    with pytest.raises(ValueError):
        transition_matrix(m, nu, acts[:1])


def test_argmax_with_ties():
    res = argmax_with_ties(np.array([1.0, 1.0 - 1e-12, 0.5]), tie_tol=1e-9)
    assert res.indices == (0, 1)
    assert res.canonical == 0
    # relative scaling: at magnitude 100 a 5e-8 gap still ties under 1e-9*100
    res = argmax_with_ties(np.array([100.0, 100.0 - 5e-8, 99.0]), tie_tol=1e-9)
    assert res.indices == (0, 1)
    res = argmax_with_ties(np.array([0.1, 0.3, 0.3 - 1e-6]), tie_tol=1e-9)
    assert res.indices == (1,)
    with pytest.raises(ValueError):
        argmax_with_ties(np.array([]))
