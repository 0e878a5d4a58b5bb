"""Consistent (feedback) equilibria for sophisticated agents.

A consistent equilibrium is a stationary policy pi(x, nu) whose support lies
in the argmax of u -> f(0, x, nu, u) + sum_y P(x, nu, y, u) V(y, mu1(nu)),
where mu1(nu) is the one-step flow image under pi and V is the value of the
stream f(1+t, ...) when everyone follows pi forever.  The best-response map
evaluates that argmax at every simplex grid node; its fixed points are found
by plain (optionally damped) iteration.

Argmax locations are stored as exact Dirac points: a parabolic refinement
around the best grid action removes the action-grid snapping, which would
otherwise dominate Lipschitz estimates of the policy (the refinement is exact
whenever the objective is quadratic in u, e.g. for the quadratic builtin).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .measures import argmax_with_ties, wasserstein1
from .mfg_dynamics import (
    AtomValueTable,
    FeedbackPolicy,
    NuGrid,
    PopulationFlow,
    TimePolicy,
    evaluate_feedback,
    feedback_step_tables,
    propagate_flow_feedback,
    solve_atom_values,
)
from .model import ModelSpec, reward, reward_values, transition_row, transition_rows


def _interp_nodes(table: np.ndarray, k: int, w_first: np.ndarray) -> np.ndarray:
    """Interpolate a (d, K+1) node table at the off-grid points w_first."""
    idx = np.minimum((w_first * k).astype(int), k - 1)
    frac = w_first * k - idx
    return (1.0 - frac) * table[:, idx] + frac * table[:, idx + 1]


def _parabolic_refine(points: np.ndarray, values: np.ndarray, j: int) -> float:
    """Vertex of the parabola through the argmax and its grid neighbors.

    Exact for objectives quadratic in the action; clamped to the bracketing
    interval so it can never leave the cell that won the grid argmax.
    """
    if j == 0 or j == points.size - 1:
        return float(points[j])
    den = values[j - 1] - 2.0 * values[j] + values[j + 1]
    if abs(den) < 1e-15:
        return float(points[j])
    step = 0.5 * (values[j - 1] - values[j + 1]) / den
    u = points[j] + step * (points[j + 1] - points[j])
    return float(min(max(u, points[j - 1]), points[j + 1]))


def feedback_best_response(
    model: ModelSpec,
    policy: FeedbackPolicy,
    table: Optional[AtomValueTable] = None,
    tie_tol: float = 1e-9,
    refine: bool = True,
) -> FeedbackPolicy:
    """One application of the best-response map to a feedback policy."""
    tables = feedback_step_tables(model, policy)
    if table is None:
        table = solve_atom_values(model, policy, tables=tables)
    _, _, w_first = tables
    K = policy.nu_grid.k
    nodes = policy.nu_grid.points
    V = table.shifted_nodes()
    V_at_w = _interp_nodes(V, K, w_first)  # (d, K+1)
    grid = model.action_grid
    loc = np.empty((model.d, K + 1))
    for k in range(K + 1):
        for x in range(model.d):
            objective = reward_values(model, 0, x, nodes[k], grid.points) + transition_rows(
                model, x, nodes[k], grid.points
            ) @ V_at_w[:, k]
            j = argmax_with_ties(objective, tie_tol).canonical
            loc[x, k] = _parabolic_refine(grid.points, objective, j) if refine else grid.points[j]
    return FeedbackPolicy(grid, policy.nu_grid, dirac_locations=loc)


def policy_distance(a: FeedbackPolicy, b: FeedbackPolicy) -> float:
    """Max over (state, node) of W1 between the two policies' relaxed actions."""
    if a.nu_grid.k != b.nu_grid.k:
        raise ValueError("policies live on different simplex grids")
    worst = 0.0
    for k, nu in enumerate(a.nu_grid.points):
        for x in range(2):
            worst = max(worst, wasserstein1(evaluate_feedback(a, x, nu), evaluate_feedback(b, x, nu)))
    return worst


@dataclass
class ConsistentVerificationReport:
    """Per-node one-step optimality gaps for a feedback policy."""

    residual: float
    per_node: np.ndarray = field(repr=False)
    value_nodes: np.ndarray = field(repr=False)

    def is_equilibrium(self, eps: float) -> bool:
        return self.residual <= eps


def verify_consistent(model: ModelSpec, policy: FeedbackPolicy, table: Optional[AtomValueTable] = None) -> ConsistentVerificationReport:
    """Max deviation gain over grid actions (plus the policy's own points).

    The own value satisfies J(x, nu) = gbar + Pbar . V(., mu1(nu)) exactly in
    the discretized system, so the reported residual is nonnegative up to
    rounding and measures how far the policy's support is from the argmax.
    """
    tables = feedback_step_tables(model, policy)
    if table is None:
        table = solve_atom_values(model, policy, tables=tables)
    _, _, w_first = tables
    K = policy.nu_grid.k
    nodes = policy.nu_grid.points
    V_at_w = _interp_nodes(table.shifted_nodes(), K, w_first)
    J = table.value_nodes()
    per_node = np.empty((model.d, K + 1))
    for k in range(K + 1):
        for x in range(model.d):
            objective = reward_values(model, 0, x, nodes[k], model.action_grid.points) + transition_rows(
                model, x, nodes[k], model.action_grid.points
            ) @ V_at_w[:, k]
            best = float(objective.max())
            own_locs, _ = evaluate_feedback(policy, x, nodes[k]).support()
            for u in own_locs:
                own_obj = reward(model, 0, x, nodes[k], float(u)) + float(
                    transition_row(model, x, nodes[k], float(u)) @ V_at_w[:, k]
                )
                best = max(best, own_obj)
            per_node[x, k] = best - J[x, k]
    return ConsistentVerificationReport(residual=float(per_node.max()), per_node=per_node, value_nodes=J)


def lipschitz_estimate(policy: FeedbackPolicy) -> float:
    """Max slope of the policy's action location across adjacent simplex nodes.

    Meaningful for (near-)deterministic policies; dense rows fall back to the
    location of each row's heaviest weight, with a warning.
    """
    K = policy.nu_grid.k
    if policy.is_dirac:
        loc = policy.locations
    else:
        warnings.warn("lipschitz_estimate on a non-Dirac policy uses each row's heaviest atom")
        loc = policy.grid.points[np.argmax(policy.rows, axis=2)]
    return float(np.max(np.abs(np.diff(loc, axis=1))) * K)


@dataclass
class ConsistentEquilibriumResult:
    policy: FeedbackPolicy
    iterations: int
    converged: bool
    update: float
    report: ConsistentVerificationReport
    lipschitz: float


def solve_consistent(
    model: ModelSpec,
    nu_grid_k: int = 200,
    init: Optional[FeedbackPolicy] = None,
    tol: float = 1e-8,
    max_iter: int = 200,
    damping: float = 1.0,
    refine: bool = True,
    tie_tol: float = 1e-9,
    verbose: bool = False,
) -> ConsistentEquilibriumResult:
    """Iterate the best-response map to a fixed point on a simplex grid.

    Convergence is measured by the max W1 change of the policy across nodes;
    damping < 1 geodesically mixes Dirac locations toward the response.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    nu_grid = NuGrid(nu_grid_k)
    mid = 0.5 * (model.action_grid.lo + model.action_grid.hi)
    policy = init if init is not None else FeedbackPolicy.constant(model.action_grid, nu_grid, mid)
    update = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        response = feedback_best_response(model, policy, tie_tol=tie_tol, refine=refine)
        update = policy_distance(response, policy)
        if damping < 1.0:
            if not policy.is_dirac:
                raise ValueError("damping < 1 requires a Dirac-form policy")
            mixed = (1.0 - damping) * policy.locations + damping * response.locations
            policy = FeedbackPolicy(model.action_grid, nu_grid, dirac_locations=mixed)
        else:
            policy = response
        if verbose:
            print(f"[solve_consistent] iter {iterations}: policy update {update:.3e}")
        if update < tol:
            break
    report = verify_consistent(model, policy)
    return ConsistentEquilibriumResult(
        policy=policy,
        iterations=iterations,
        converged=update < tol,
        update=update,
        report=report,
        lipschitz=lipschitz_estimate(policy),
    )


def quadratic_response_location(model: ModelSpec, x: int, nu0: float, V_at_w: np.ndarray) -> float:
    """Closed-form argmax for the quadratic builtin's best-response objective.

    The objective -u^2 + (1/2 + nu(0)) u + const + row(u) . V is an exact
    parabola whose vertex is 1/4 + nu(0)/2 +/- (V(0) - V(1))/4, the sign
    depending on whether the action pushes toward or away from state 0.
    """
    sign = 1.0 if x == 0 else -1.0
    u = 0.25 + 0.5 * nu0 + 0.25 * sign * (float(V_at_w[0]) - float(V_at_w[1]))
    return float(min(max(u, model.action_grid.lo), model.action_grid.hi))


def induced_time_policy(model: ModelSpec, policy: FeedbackPolicy, nu0, horizon: int):
    """Freeze a feedback policy along its own flow into a time-indexed policy.

    A consistent equilibrium evaluated this way should verify as a classic
    equilibrium from the same initial distribution (up to grid and tail error).
    """
    flow = propagate_flow_feedback(model, policy, nu0, horizon)
    actions = [[evaluate_feedback(policy, x, flow.at(t)) for x in range(model.d)] for t in range(horizon + 1)]
    return TimePolicy(actions), flow
