"""N-agent lattice, exact aggregate chains, gaps, and Monte Carlo."""

import dataclasses
import itertools

import numpy as np
import pytest

import joint_oracle as jo
from ticmfg.measures import RelaxedAction
from ticmfg.mfg_dynamics import FeedbackPolicy, NuGrid, TimePolicy, propagate_flow_feedback
from ticmfg.model import horizon_for_tail, quadratic_model, tracking_model
from ticmfg import nagent as na


def nu_dependent_policy(model, K=4):
    locs = np.array(
        [[0.2 + 0.1 * k / K for k in range(K + 1)], [0.7 - 0.2 * k / K for k in range(K + 1)]]
    )
    return FeedbackPolicy(model.action_grid, NuGrid(K), dirac_locations=locs)


def dense_policy(model, K=3, seed=7):
    rng = np.random.default_rng(seed)
    rows = rng.random((2, K + 1, model.action_grid.m)) ** 6
    rows /= rows.sum(axis=2, keepdims=True)
    return FeedbackPolicy(model.action_grid, NuGrid(K), rows=rows)


def joint_for(point):
    """A joint state realizing a lattice point with agent 1 first."""
    n, k, x = point.n, int(point.counts[0]), point.x
    return tuple([x] + [0] * (k - (x == 0)) + [1] * ((n - k) - (x == 1)))


def zero_reward_model():
    return dataclasses.replace(
        tracking_model(), g=lambda x, nu, u: 0.0, g_vec=None, reward_sup=0.0, name="zero"
    )


def brute_force_round(nu, n, x):
    nu = np.asarray(nu, dtype=float)
    d = nu.size
    best = None
    for counts in itertools.product(range(n + 1), repeat=d):
        if sum(counts) != n or counts[x] < 1:
            continue
        dist = float(np.sum((np.array(counts) / n - nu) ** 2))
        # ties: prefer larger entries at larger indices = smaller front-lex tuple
        key = (round(dist, 12), counts)
        if best is None or key < best[0]:
            best = (key, counts)
    return np.array(best[1]) / n


def test_lattice_round_examples_and_brute_force():
    np.testing.assert_allclose(na.lattice_round([0.5, 1 / 6, 1 / 3], 3, 2), [1 / 3] * 3, atol=1e-12)
    np.testing.assert_allclose(na.lattice_round([0.0, 1.0], 4, 0), [0.25, 0.75], atol=1e-12)
    # already on the lattice with mass at x: fixed point
    np.testing.assert_allclose(na.lattice_round([0.25, 0.75], 4, 0), [0.25, 0.75], atol=1e-12)
    rng = np.random.default_rng(3)
    for n in (2, 3, 5, 8, 12):
        for _ in range(20):
            nu = rng.dirichlet(np.ones(2))
            for x in range(2):
                np.testing.assert_allclose(
                    na.lattice_round(nu, n, x), brute_force_round(nu, n, x), atol=1e-12
                )
    for n in (2, 4, 6):
        for _ in range(12):
            nu = rng.dirichlet(np.ones(3))
            for x in range(3):
                np.testing.assert_allclose(
                    na.lattice_round(nu, n, x), brute_force_round(nu, n, x), atol=1e-12
                )


def test_enumerate_lattice_counts():
    pts = na.enumerate_lattice(2, 2)
    assert len(pts) == 4
    assert {(p.x, p.counts) for p in pts} == {(0, (2, 0)), (0, (1, 1)), (1, (1, 1)), (1, (0, 2))}
    for n in (3, 5, 9):
        assert len(na.enumerate_lattice(n, 2)) == 2 * n
    assert len(na.enumerate_lattice(2, 1)) == 1
    assert len(na.enumerate_lattice(2, 3)) == 9


def test_others_action_transition_examples():
    model = tracking_model()
    pol_one = FeedbackPolicy.constant(model.action_grid, NuGrid(1), 1.0)
    assert na.others_action_transition(model, pol_one, [0.75, 0.25], 0) == pytest.approx(0.875, abs=1e-14)
    # uniform mixture on {0, 1}: average of the two Dirac rows
    grid = model.action_grid
    w = np.zeros(grid.m)
    w[0] = w[-1] = 0.5
    mix = FeedbackPolicy(grid, NuGrid(1), rows=np.tile(w, (2, 2, 1)))
    nu = np.array([0.4, 0.6])
    avg = 0.5 * (0.5 * 0.4 + 0.5 * 0.0) + 0.5 * (0.5 * 0.4 + 0.5 * 1.0)
    assert na.others_action_transition(model, mix, nu, 0) == pytest.approx(avg, abs=1e-14)


def test_aggregate_values_match_oracle_n2():
    model = tracking_model()
    pol = nu_dependent_policy(model)
    T = 6
    jt = na.aggregate_backward_values(model, pol, 2, T, "J")
    vt = na.aggregate_backward_values(model, pol, 2, T, "V")
    for joint in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        k = sum(1 for s in joint if s == 0)
        assert jt.at(0, joint[0], k) == pytest.approx(
            jo.value_oracle(model, pol, 2, joint, T, clock_offset=0), abs=1e-10
        )
        assert vt.at(0, joint[0], k) == pytest.approx(
            jo.value_oracle(model, pol, 2, joint, T, clock_offset=1), abs=1e-10
        )


def test_aggregate_values_gaps_match_oracle_n3_dense_policy():
    model = quadratic_model()
    pol = dense_policy(model)
    n, T = 3, 5
    ker = na._AggregateKernel(model, pol, n)
    jt = na.aggregate_backward_values(model, pol, n, T, "J", kernel=ker)
    vt = na.aggregate_backward_values(model, pol, n, T - 1, "V", kernel=ker)
    rep = na.consistent_gap(model, pol, n, horizon=T)
    for point in na.enumerate_lattice(n, 2):
        k = int(point.counts[0])
        joint = joint_for(point)
        assert jt.at(0, point.x, k) == pytest.approx(
            jo.value_oracle(model, pol, n, joint, T, clock_offset=0), abs=1e-10
        )
        W = na.landing_continuations(model, pol, point, vt, kernel=ker)
        for y in range(2):
            assert W[y] == pytest.approx(
                jo.landing_continuation_oracle(model, pol, n, joint, y, T - 1), abs=1e-10
            )
        gap_oracle, _ = jo.deviation_gap_oracle(model, pol, n, joint, T)
        assert rep.per_point[point.x, k] == pytest.approx(gap_oracle, abs=1e-10)
    assert rep.epsilon_n == pytest.approx(np.nanmax(rep.per_point), abs=0)


def test_pasting_identity_exact():
    """f_bar(0) + integrated row . W reproduces J(0) cell by cell."""
    from ticmfg.measures import integrate_reward, integrate_transition
    from ticmfg.mfg_dynamics import evaluate_feedback

    model = tracking_model()
    pol = nu_dependent_policy(model)
    n, T = 5, 8
    ker = na._AggregateKernel(model, pol, n)
    jt = na.aggregate_backward_values(model, pol, n, T, "J", kernel=ker)
    vt = na.aggregate_backward_values(model, pol, n, T - 1, "V", kernel=ker)
    for point in na.enumerate_lattice(n, 2):
        k = int(point.counts[0])
        W = na.landing_continuations(model, pol, point, vt, kernel=ker)
        act = evaluate_feedback(pol, point.x, point.nu)
        lhs = integrate_reward(model, 0, point.x, point.nu, act) + float(
            integrate_transition(model, point.x, point.nu, act) @ W
        )
        assert lhs == pytest.approx(jt.at(0, point.x, k), abs=1e-12)


def test_value_table_bound_and_invalid_cells():
    model = tracking_model()
    pol = nu_dependent_policy(model)
    n, T = 4, 6
    jt = na.aggregate_backward_values(model, pol, n, T, "J")
    cap = model.reward_sup * sum(float(model.discount.delta(l)) for l in range(T + 1))
    assert np.nanmax(np.abs(jt.values)) <= cap + 1e-12
    assert np.isnan(jt.values[0, 0, 0]) and np.isnan(jt.values[0, 1, n])
    with pytest.raises(ValueError):
        jt.at(0, 0, 0)
    with pytest.raises(ValueError):
        na.aggregate_backward_values(model, pol, na.EXACT_N_CAP + 1, 2)


def test_zero_reward_model_all_zero():
    model = zero_reward_model()
    pol = nu_dependent_policy(model)
    jt = na.aggregate_backward_values(model, pol, 4, 5, "J")
    assert np.nanmax(np.abs(jt.values)) == 0.0
    rep = na.consistent_gap(model, pol, 4, horizon=3)
    assert rep.epsilon_n == 0.0
    vt = na.aggregate_backward_values(model, pol, 4, 2, "V")
    W = na.landing_continuations(model, pol, na.LatticePoint(x=0, counts=(2, 2)), vt)
    assert np.all(W == 0.0)
    st = na.mc_simulate(model, pol, 4, ("fixed", 0, [0.5, 0.5]), 3, 500, seed=1)
    assert st.value_mean == 0.0 and st.value_ci99 == 0.0
    tp = TimePolicy.constant(model.action_grid, 2, 3, 0.5)
    pr = na.precommit_gap(model, tp, [0.5, 0.5], 4, samples=500, seed=1)
    assert pr.gap == 0.0 and pr.upper99 == 0.0


def test_state_symmetric_model_symmetric_values():
    """Swap-invariant rewards give tables symmetric under (x,k) -> (1-x, N-k)."""
    base = tracking_model()
    model = dataclasses.replace(
        base,
        g=lambda x, nu, u: 1.0 - abs(nu[x] * u - 0.25),
        g_vec=None,
        name="swap-symmetric",
    )
    pol = FeedbackPolicy.constant(model.action_grid, NuGrid(1), 0.6)
    n, T = 5, 6
    jt = na.aggregate_backward_values(model, pol, n, T, "J")
    for t in range(T + 1):
        for k in range(n + 1):
            for x in range(2):
                a, b = jt.values[t, x, k], jt.values[t, 1 - x, n - k]
                assert (np.isnan(a) and np.isnan(b)) or a == pytest.approx(b, abs=1e-12)


def test_mc_matches_exact_and_is_deterministic():
    model = tracking_model()
    pol = nu_dependent_policy(model)
    n, T = 16, horizon_for_tail(model, 1e-8)
    jt = na.aggregate_backward_values(model, pol, n, T, "J")
    nu0 = np.array([10 / 16, 6 / 16])
    flow = propagate_flow_feedback(model, pol, nu0, T)
    st = na.mc_simulate(model, pol, n, ("fixed", 0, nu0), T, 20_000, seed=123, flow_ref=flow.mu)
    sigma = st.value_ci99 / 2.5758293035489004
    assert abs(st.value_mean - jt.at(0, 0, 10)) <= 3 * sigma
    assert st.flow_l1_err is not None and st.flow_l1_err[0] == 0.0
    st2 = na.mc_simulate(model, pol, n, ("fixed", 0, nu0), T, 20_000, seed=123)
    assert st2.value_mean == st.value_mean and np.array_equal(st2.flow_mean, st.flow_mean)
    st3 = na.mc_simulate(model, pol, n, ("fixed", 0, nu0), T, 20_000, seed=124)
    assert st3.value_mean != st.value_mean


def test_mc_exact_agreement_small_n():
    model = tracking_model()
    pol = nu_dependent_policy(model)
    T = horizon_for_tail(model, 1e-8)
    for n, k, x in ((2, 1, 0), (3, 2, 1), (4, 2, 0)):
        jt = na.aggregate_backward_values(model, pol, n, T, "J")
        nu0 = np.array([k / n, 1 - k / n])
        st = na.mc_simulate(model, pol, n, ("fixed", x, nu0), T, 100_000, seed=11 + n)
        sigma = st.value_ci99 / 2.5758293035489004
        assert abs(st.value_mean - jt.at(0, x, k)) <= 3 * sigma


def test_mc_deviation_overlay_matches_oracle():
    model = tracking_model()
    T = 8
    tp = TimePolicy.constant(model.action_grid, 2, T, 0.5)
    nu = np.array([0.5, 0.5])
    # iid-averaged exact value with agent 1 deviating to u=0.25 at t=0
    exact = 0.0
    for joint in jo.joint_states(2):
        p = np.prod([nu[s] for s in joint])
        exact += p * jo._time_value(model, tp, 2, joint, T, dev_u=0.25)
    st = na.mc_simulate(model, tp, 2, ("iid", nu), T, 60_000, seed=5, deviation_u=0.25)
    sigma = st.value_ci99 / 2.5758293035489004
    assert abs(st.value_mean - exact) <= 3 * sigma


def test_precommit_gap_matches_oracle_n2():
    model = tracking_model()
    T = horizon_for_tail(model, 1e-8)
    tp = TimePolicy.constant(model.action_grid, 2, T, 0.5)
    exact = jo.precommit_gap_oracle(model, tp, np.array([0.5, 0.5]), 2, T)
    rep = na.precommit_gap(model, tp, [0.5, 0.5], 2, samples=150_000, seed=42)
    sigma = max(rep.ci99 / 2.5758293035489004, 1e-12)
    assert abs(rep.gap - exact) <= 4 * sigma
    assert rep.upper99 >= rep.gap
    rep2 = na.precommit_gap(model, tp, [0.5, 0.5], 2, samples=150_000, seed=42)
    assert rep2.gap == rep.gap and rep2.upper99 == rep.upper99


def test_conditional_deviation_gap():
    gap4, prob4 = na.conditional_deviation_gap(4)
    assert prob4 == pytest.approx(0.25, abs=1e-15)
    assert gap4 >= -1e-10
    with pytest.raises(ValueError):
        na.conditional_deviation_gap(5)
    # cross-check against the joint oracle at N=4
    model = tracking_model()
    pol = FeedbackPolicy.constant(model.action_grid, NuGrid(1), 0.5)
    T = horizon_for_tail(model, 1e-8)
    gaps = []
    for x, joint in ((0, (0, 0, 0, 1)), (1, (1, 0, 0, 0))):
        g, _ = jo.deviation_gap_oracle(model, pol, 4, joint, T)
        gaps.append(g)
    assert gap4 == pytest.approx(min(gaps), abs=1e-10)


def test_flow_discrepancy_exact_chain():
    model = tracking_model()
    pol = nu_dependent_policy(model)
    nu = np.array([0.5, 0.5])
    out = na.flow_discrepancy(model, pol, 8, 0, nu, [0, 1, 2])
    assert out[0] == pytest.approx(0.0, abs=1e-14)  # start on the lattice
    assert out[1] > 0.0 and out[2] > 0.0
    # doubling N shrinks the discrepancy
    out2 = na.flow_discrepancy(model, pol, 64, 0, nu, [1, 2])
    assert out2[1] < out[1] and out2[2] < out[2]


def test_value_and_continuation_discrepancy_shrink():
    model = quadratic_model()
    pol = nu_dependent_policy(model)
    nus = [np.array([a, 1 - a]) for a in (0.2, 0.5, 0.8)]
    v8 = na.value_discrepancy(model, pol, 8, nus)
    v64 = na.value_discrepancy(model, pol, 64, nus)
    assert v64 < v8
    c8 = na.continuation_discrepancy(model, pol, 8, nus)
    c64 = na.continuation_discrepancy(model, pol, 64, nus)
    assert c64 < c8
