"""Classic mean-field equilibria: a time-indexed policy plus a population flow.

Equilibrium means (a) the flow is the one the policy itself generates from
the initial distribution, and (b) no state at any reconsideration time gains
from a one-step action deviation followed by reverting to the policy, where
the deviator's reward clock restarts at the deviation time.  The solver
iterates the one-step best-response map: re-propagate the flow, rebuild the
restarted-clock continuation values, and point every (t, x) at the canonical
argmax.  Fixed points of that map are exactly the equilibria, so the stopping
rule is the verified deviation residual itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .measures import argmax_with_ties, dirac
from .mfg_dynamics import (
    PopulationFlow,
    TimePolicy,
    _integrated_tables,
    continuation_values_time,
    deviation_values,
    policy_value_time,
    propagate_flow_time,
)
from .model import ModelSpec, check_simplex, horizon_for_tail, tail_bound


def best_response(model: ModelSpec, policy: TimePolicy, nu0, tie_tol: float = 1e-9) -> TimePolicy:
    """One application of the best-response map.

    The flow and the continuation values are those of the input policy; each
    (t, x) is then repointed at the canonical argmax of the one-step payoff
    f(0, x, mu_t, u) + P(x, mu_t, ., u) . v(t+1, .).  Rewards beyond the
    policy horizon are dropped (covered by the truncation tail bound).
    """
    flow = propagate_flow_time(model, policy, nu0)
    tables = _integrated_tables(model, policy, flow)
    grid = model.action_grid
    T = policy.horizon
    actions = []
    for t in range(T + 1):
        v = continuation_values_time(model, policy, flow, t, tables=tables)
        row = []
        for x in range(model.d):
            objective = deviation_values(model, x, flow.at(t), v)
            row.append(dirac(grid, grid.points[argmax_with_ties(objective, tie_tol).canonical]))
        actions.append(row)
    return TimePolicy(actions)


@dataclass
class ClassicVerificationReport:
    """One-step deviation residuals for a policy along its own flow.

    residual maximizes the truncated-horizon deviation gain over all times
    and states; the sup includes the policy's own action, so it is >= 0 up to
    rounding.  flow_residual is nonzero only when an externally supplied flow
    violates the flow recursion.
    """

    residual: float
    worst_point: tuple
    flow_residual: float
    tail: float
    horizon: int
    flow: PopulationFlow = field(repr=False)
    per_time: np.ndarray = field(repr=False)

    @property
    def certified_epsilon(self) -> float:
        """Deviation-gain bound for the untruncated game at the initial time."""
        return max(self.residual, 0.0) + 2.0 * self.tail

    def is_equilibrium(self, eps: float) -> bool:
        return self.certified_epsilon <= eps and self.flow_residual <= 1e-9


def verify_classic(
    model: ModelSpec,
    policy: TimePolicy,
    nu0=None,
    flow: Optional[PopulationFlow] = None,
) -> ClassicVerificationReport:
    """Check both equilibrium conditions for a candidate policy.

    Given nu0 the flow is re-propagated from the policy (flow condition holds
    by construction); given an explicit flow its recursion violation is
    measured instead.
    """
    if (flow is None) == (nu0 is None):
        raise ValueError("pass exactly one of nu0 or flow")
    if flow is None:
        flow = propagate_flow_time(model, policy, nu0)
        flow_res = 0.0
    else:
        if flow.horizon != policy.horizon:
            raise ValueError("policy and flow horizons differ")
        tables = _integrated_tables(model, policy, flow)
        flow_res = max(
            (float(np.max(np.abs(flow.at(t + 1) - flow.at(t) @ tables[0][t]))) for t in range(flow.horizon)),
            default=0.0,
        )
    T = policy.horizon
    tables = _integrated_tables(model, policy, flow)
    J = policy_value_time(model, policy, flow)
    per_time = np.empty((T + 1, model.d))
    for t in range(T + 1):
        v = continuation_values_time(model, policy, flow, t, tables=tables)
        for x in range(model.d):
            per_time[t, x] = float(deviation_values(model, x, flow.at(t), v).max()) - J[t, x]
    worst = np.unravel_index(int(np.argmax(per_time)), per_time.shape)
    res = float(per_time[worst])
    tail = tail_bound(model, T)
    if res < -2.0 * tail - 1e-9:
        raise RuntimeError(f"deviation residual {res} below -2*tail; inconsistent inputs")
    return ClassicVerificationReport(
        residual=res,
        worst_point=(int(worst[0]), int(worst[1])),
        flow_residual=flow_res,
        tail=tail,
        horizon=T,
        flow=flow,
        per_time=per_time,
    )


@dataclass
class ClassicEquilibriumResult:
    policy: TimePolicy
    flow: PopulationFlow
    residual: float
    worst_point: tuple
    iterations: int
    converged: bool
    residual_trace: list
    horizon: int
    eps_tail: float
    report: ClassicVerificationReport


def solve_classic(
    model: ModelSpec,
    nu0,
    init: Optional[TimePolicy] = None,
    eps_tail: float = 1e-8,
    tol: float = 1e-10,
    max_iter: int = 500,
    tie_tol: float = 1e-9,
    verbose: bool = False,
) -> ClassicEquilibriumResult:
    """Best-response iteration to a classic equilibrium from nu0.

    The horizon keeps the discarded reward tail below eps_tail.  Iteration
    stops when the verified deviation residual drops to tol; non-convergence
    is reported through the converged flag and the residual trace, never as
    an exception.
    """
    nu0 = check_simplex(np.asarray(nu0, dtype=float), tol=1e-9)
    T = horizon_for_tail(model, eps_tail)
    if init is not None and init.horizon != T:
        raise ValueError(f"init policy horizon {init.horizon} != required {T}")
    mid = 0.5 * (model.action_grid.lo + model.action_grid.hi)
    policy = init if init is not None else TimePolicy.constant(model.action_grid, model.d, T, mid)
    trace = []
    report = None
    iterations = 0
    for iterations in range(1, max_iter + 1):
        policy = best_response(model, policy, nu0, tie_tol=tie_tol)
        report = verify_classic(model, policy, nu0=nu0)
        trace.append(report.residual)
        if verbose:
            print(f"[solve_classic] iter {iterations}: residual {report.residual:.3e}")
        if report.residual <= tol:
            break
    return ClassicEquilibriumResult(
        policy=policy,
        flow=report.flow,
        residual=report.residual,
        worst_point=report.worst_point,
        iterations=iterations,
        converged=report.residual <= tol,
        residual_trace=trace,
        horizon=T,
        eps_tail=eps_tail,
        report=report,
    )
