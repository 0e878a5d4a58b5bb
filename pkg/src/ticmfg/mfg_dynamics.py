"""Policies, population flows, and value recursions.

Two policy shapes cover the two equilibrium notions.  A TimePolicy fixes a
relaxed action per (time, state) over a finite horizon and goes with a
deterministic population flow; its value functions restart the reward clock
at every reconsideration time, which is what makes non-geometric discounting
time-inconsistent.  A FeedbackPolicy maps (state, population distribution) to
a relaxed action on a grid over the simplex (two states only) and supports
stationary value tables built one geometric discount atom at a time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .measures import RelaxedAction, dirac, dirac_point, integrate_reward, integrate_transition, transition_matrix
from .model import (
    ActionGrid,
    ModelSpec,
    check_simplex,
    clamp_simplex,
    reward,
    reward_values,
    transition_row,
    transition_rows,
)


@dataclass(frozen=True)
class NuGrid:
    """Uniform grid over the two-state simplex: node k is (k/K, 1 - k/K)."""

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("need at least one interval")

    @property
    def n_nodes(self) -> int:
        return self.k + 1

    @property
    def points(self) -> np.ndarray:
        first = np.arange(self.k + 1) / self.k
        return np.stack([first, 1.0 - first], axis=1)

    def locate(self, nu) -> tuple:
        """Bracketing node index and interpolation fraction for nu(0)."""
        p = float(np.asarray(nu, dtype=float)[0])
        if p < -1e-12 or p > 1 + 1e-12:
            raise ValueError(f"nu(0)={p} outside [0,1]")
        p = min(max(p, 0.0), 1.0)
        idx = min(int(p * self.k), self.k - 1)
        return idx, p * self.k - idx


class TimePolicy:
    """Relaxed actions indexed by (t, x) for t = 0..horizon."""

    def __init__(self, actions: Sequence[Sequence[RelaxedAction]]):
        self.actions = [list(row) for row in actions]
        if not self.actions or any(len(row) != len(self.actions[0]) for row in self.actions):
            raise ValueError("actions must be a (T+1) x d table")

    @property
    def horizon(self) -> int:
        return len(self.actions) - 1

    @property
    def d(self) -> int:
        return len(self.actions[0])

    def action(self, t: int, x: int) -> RelaxedAction:
        return self.actions[t][x]

    @classmethod
    def constant(cls, grid: ActionGrid, d: int, horizon: int, u: float) -> "TimePolicy":
        a = dirac(grid, u)
        return cls([[a] * d for _ in range(horizon + 1)])

    def to_dict(self) -> dict:
        rows = [[list(map(float, a.weights)) if a.point is None else {"point": a.point}
                 for a in row] for row in self.actions]
        g = self.actions[0][0].grid
        return {"kind": "time", "action_grid": {"lo": g.lo, "hi": g.hi, "m": g.m}, "actions": rows}

    @classmethod
    def from_dict(cls, data: dict) -> "TimePolicy":
        ag = data["action_grid"]
        grid = ActionGrid.uniform(ag["lo"], ag["hi"], ag["m"])
        rows = []
        for row in data["actions"]:
            out = []
            for cell in row:
                if isinstance(cell, dict):
                    out.append(RelaxedAction(grid, point=cell["point"]))
                else:
                    out.append(RelaxedAction(grid, weights=np.asarray(cell, dtype=float)))
            rows.append(out)
        return cls(rows)


class FeedbackPolicy:
    """Stationary policy pi(x, nu) tabulated on a NuGrid (two states).

    Rows are either dense weight vectors over the action grid or exact Dirac
    locations (one float per node); the latter keeps off-grid argmax points
    exact.  Off-node nu evaluates by linear interpolation along nu(0):
    weights blend componentwise, Dirac locations blend as points.
    """

    def __init__(self, grid: ActionGrid, nu_grid: NuGrid, rows=None, dirac_locations=None):
        self.grid = grid
        self.nu_grid = nu_grid
        if (rows is None) == (dirac_locations is None):
            raise ValueError("provide exactly one of rows or dirac_locations")
        if rows is not None:
            arr = np.asarray(rows, dtype=float)
            if arr.shape != (2, nu_grid.n_nodes, grid.m):
                raise ValueError(f"rows must have shape (2, {nu_grid.n_nodes}, {grid.m})")
            sums = arr.sum(axis=2)
            if np.any(arr < -1e-12) or np.max(np.abs(sums - 1.0)) > 1e-9:
                raise ValueError("each row must be a probability vector")
            self.rows = np.maximum(arr, 0.0) / sums[:, :, None]
            self.locations = None
        else:
            loc = np.asarray(dirac_locations, dtype=float)
            if loc.shape != (2, nu_grid.n_nodes):
                raise ValueError(f"dirac_locations must have shape (2, {nu_grid.n_nodes})")
            if loc.min() < grid.lo - 1e-12 or loc.max() > grid.hi + 1e-12:
                raise ValueError("dirac locations outside the action interval")
            self.rows = None
            self.locations = np.clip(loc, grid.lo, grid.hi)

    @property
    def is_dirac(self) -> bool:
        return self.locations is not None

    @classmethod
    def constant(cls, grid: ActionGrid, nu_grid: NuGrid, u: float) -> "FeedbackPolicy":
        return cls(grid, nu_grid, dirac_locations=np.full((2, nu_grid.n_nodes), float(u)))

    def to_dict(self) -> dict:
        base = {
            "kind": "feedback",
            "nu_grid_k": self.nu_grid.k,
            "action_grid": {"lo": self.grid.lo, "hi": self.grid.hi, "m": self.grid.m},
        }
        if self.is_dirac:
            base["dirac_locations"] = [list(map(float, row)) for row in self.locations]
        else:
            base["rows"] = [[list(map(float, w)) for w in node_rows] for node_rows in self.rows]
        return base

    @classmethod
    def from_dict(cls, data: dict) -> "FeedbackPolicy":
        ag = data["action_grid"]
        grid = ActionGrid.uniform(ag["lo"], ag["hi"], ag["m"])
        nu_grid = NuGrid(int(data["nu_grid_k"]))
        if "dirac_locations" in data:
            return cls(grid, nu_grid, dirac_locations=np.asarray(data["dirac_locations"], dtype=float))
        return cls(grid, nu_grid, rows=np.asarray(data["rows"], dtype=float))


def save_policy(policy, path) -> None:
    Path(path).write_text(json.dumps(policy.to_dict()) + "\n")


def load_policy(path):
    data = json.loads(Path(path).read_text())
    if data.get("kind") == "time":
        return TimePolicy.from_dict(data)
    return FeedbackPolicy.from_dict(data)


def evaluate_feedback(policy: FeedbackPolicy, x: int, nu) -> RelaxedAction:
    """The relaxed action pi(x, nu), interpolating between bracketing nodes."""
    idx, frac = policy.nu_grid.locate(nu)
    if policy.is_dirac:
        loc = (1.0 - frac) * policy.locations[x, idx] + frac * policy.locations[x, idx + 1]
        return dirac_point(policy.grid, float(loc))
    w = (1.0 - frac) * policy.rows[x, idx] + frac * policy.rows[x, idx + 1]
    return RelaxedAction(policy.grid, weights=w)


@dataclass(frozen=True)
class PopulationFlow:
    """Deterministic distribution path mu_0..mu_T, rows on the simplex."""

    mu: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        object.__setattr__(self, "mu", mu)
        if mu.ndim != 2:
            raise ValueError("flow must be (T+1, d)")
        for row in mu:
            check_simplex(row, tol=1e-9)

    @property
    def horizon(self) -> int:
        return self.mu.shape[0] - 1

    def at(self, t: int) -> np.ndarray:
        return self.mu[t]


def propagate_flow_time(model: ModelSpec, policy: TimePolicy, nu0) -> PopulationFlow:
    """mu_{t+1} = mu_t P^{pi_t}(mu_t) out to the policy horizon."""
    nu0 = check_simplex(nu0, tol=1e-9)
    T = policy.horizon
    mu = np.empty((T + 1, model.d))
    mu[0] = nu0
    for t in range(T):
        P = transition_matrix(model, mu[t], policy.actions[t])
        mu[t + 1] = clamp_simplex(mu[t] @ P)
    return PopulationFlow(mu)


def propagate_flow_feedback(model: ModelSpec, policy: FeedbackPolicy, nu0, horizon: int) -> PopulationFlow:
    """Flow under a stationary feedback policy evaluated along its own path."""
    nu0 = check_simplex(nu0, tol=1e-9)
    mu = np.empty((horizon + 1, model.d))
    mu[0] = nu0
    for t in range(horizon):
        acts = [evaluate_feedback(policy, x, mu[t]) for x in range(model.d)]
        P = transition_matrix(model, mu[t], acts)
        mu[t + 1] = clamp_simplex(mu[t] @ P)
    return PopulationFlow(mu)


def _integrated_tables(model: ModelSpec, policy: TimePolicy, flow: PopulationFlow):
    """Per-time integrated transition matrices and reward bases.

    Returns (Pbar, gbar) where Pbar[t] is the d x d matrix under pi_t at mu_t
    and gbar[t, l, x] = integral of f(l, x, mu_t, u) d pi_t(x).  For separable
    models gbar factorizes as delta(l) * (integrated g), so only l=0 is stored
    and callers rescale by the discount.
    """
    T = policy.horizon
    Pbar = np.empty((T + 1, model.d, model.d))
    for t in range(T + 1):
        Pbar[t] = transition_matrix(model, flow.at(t), policy.actions[t])
    if model.separable:
        g0 = np.empty((T + 1, model.d))
        for t in range(T + 1):
            for x in range(model.d):
                g0[t, x] = integrate_reward(model, 0, x, flow.at(t), policy.action(t, x))
        return Pbar, g0
    return Pbar, None


def continuation_values_time(
    model: ModelSpec, policy: TimePolicy, flow: PopulationFlow, t: int, tables=None
) -> np.ndarray:
    """v(t+1, x): value of the future stream with the reward clock restarted at t.

    v(t+1, x) = E[ sum_{l>=1} f(l, s_{t+l}, mu_{t+l}) | s_{t+1} = x ] under the
    policy's own future actions; rewards beyond the horizon are dropped (their
    total is covered by the truncation tail bound).
    """
    T = policy.horizon
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside 0..{T}")
    Pbar, g0 = tables if tables is not None else _integrated_tables(model, policy, flow)
    v = np.zeros(model.d)
    for l in range(T - t, 0, -1):
        if g0 is not None:
            stage = float(model.discount.delta(l)) * g0[t + l]
        else:
            stage = np.array(
                [integrate_reward(model, l, x, flow.at(t + l), policy.action(t + l, x)) for x in range(model.d)]
            )
        v = stage + Pbar[t + l] @ v
    return v


def policy_value_time(model: ModelSpec, policy: TimePolicy, flow: PopulationFlow) -> np.ndarray:
    """J(t, x) for t = 0..T: the agent's value at each reconsideration time.

    Each row restarts the reward clock, so the table needs one continuation
    pass per t rather than a single backward recursion.
    """
    T = policy.horizon
    tables = _integrated_tables(model, policy, flow)
    Pbar, g0 = tables
    J = np.empty((T + 1, model.d))
    for t in range(T + 1):
        v = continuation_values_time(model, policy, flow, t, tables=tables)
        if g0 is not None:
            stage = float(model.discount.delta(0)) * g0[t]
        else:
            stage = np.array(
                [integrate_reward(model, 0, x, flow.at(t), policy.action(t, x)) for x in range(model.d)]
            )
        J[t] = stage + Pbar[t] @ v
    return J


def deviation_values(model: ModelSpec, x: int, nu, v_next: np.ndarray) -> np.ndarray:
    """One-step deviation payoffs f(0,x,nu,u) + P(x,nu,.,u) . v_next over the action grid."""
    us = model.action_grid.points
    vals = reward_values(model, 0, x, nu, us)
    rows = transition_rows(model, x, nu, us)
    return vals + rows @ np.asarray(v_next, dtype=float)


def deviation_value(model: ModelSpec, x: int, nu, u: float, v_next: np.ndarray) -> float:
    """One-step deviation payoff at a single (possibly off-grid) action."""
    return reward(model, 0, x, nu, u) + float(transition_row(model, x, nu, u) @ np.asarray(v_next, dtype=float))


@dataclass
class AtomValueTable:
    """Per-geometric-atom value tables J_rho(x, nu) on a NuGrid.

    per_atom[i, x, k] solves J = gbar + rho_i * Pbar J(w(nu)) for the policy's
    integrated reward gbar and one-step flow map w.  The mixture's own value
    uses weights w_i; the one-step-shifted value additionally carries rho_i.
    """

    nu_grid: NuGrid
    atoms: list
    per_atom: np.ndarray

    def _interp(self, table: np.ndarray, nu) -> np.ndarray:
        idx, frac = self.nu_grid.locate(nu)
        return (1.0 - frac) * table[:, idx] + frac * table[:, idx + 1]

    def value_nodes(self) -> np.ndarray:
        """J(x, nu_k) = sum_i w_i J_i: value with the reward clock at zero."""
        return sum(w * self.per_atom[i] for i, (_, w) in enumerate(self.atoms))

    def shifted_nodes(self) -> np.ndarray:
        """V(x, nu_k) = sum_i w_i rho_i J_i: value of the stream f(1+t, ...)."""
        return sum(w * r * self.per_atom[i] for i, (r, w) in enumerate(self.atoms))

    def value_at(self, nu) -> np.ndarray:
        return self._interp(self.value_nodes(), nu)

    def shifted_at(self, nu) -> np.ndarray:
        return self._interp(self.shifted_nodes(), nu)


def feedback_step_tables(model: ModelSpec, policy: FeedbackPolicy):
    """Integrated rewards, rows, and flow images at every grid node.

    Returns (gbar, Pbar, w_first) with shapes (d, K+1), (d, K+1, d), (K+1,):
    gbar and Pbar integrate g and the kernel under pi(x, nu_k), and w_first is
    the first coordinate of the one-step flow image w(nu_k) = nu_k P(nu_k).
    """
    if not model.separable:
        raise ValueError("feedback value tables require a separable reward")
    K = policy.nu_grid.k
    nodes = policy.nu_grid.points
    gbar = np.empty((model.d, K + 1))
    Pbar = np.empty((model.d, K + 1, model.d))
    for k in range(K + 1):
        for x in range(model.d):
            act = evaluate_feedback(policy, x, nodes[k])
            gbar[x, k] = integrate_reward(model, 0, x, nodes[k], act)
            Pbar[x, k] = integrate_transition(model, x, nodes[k], act)
    w_first = np.einsum("kx,xky->ky", nodes, Pbar)[:, 0] if model.d == 2 else None
    return gbar, Pbar, np.clip(w_first, 0.0, 1.0)


def solve_atom_values(
    model: ModelSpec,
    policy: FeedbackPolicy,
    tol: float = 1e-12,
    max_iter: int = 10_000,
    tables=None,
) -> AtomValueTable:
    """Value tables J_rho for every discount atom by interpolated value iteration.

    Each atom iterates J <- gbar + rho * Pbar J(w(nu)) with J(., w) linear in
    w(0) between grid nodes; iteration stops once the sup-norm update falls
    below tol * (1 - rho), which bounds the remaining distance to the fixed
    point by tol.
    """
    atoms = model.discount.atoms()
    if atoms is None:
        raise ValueError("discount must expose a geometric-atom representation")
    gbar, Pbar, w_first = tables if tables is not None else feedback_step_tables(model, policy)
    K = policy.nu_grid.k
    idx = np.minimum((w_first * K).astype(int), K - 1)
    frac = w_first * K - idx
    per_atom = np.empty((len(atoms), model.d, K + 1))
    for i, (rho, _) in enumerate(atoms):
        J = gbar / max(1.0 - rho, 1e-12)  # start at the constant-flow guess scale
        for _ in range(max_iter):
            Jw = (1.0 - frac) * J[:, idx] + frac * J[:, idx + 1]
            J_new = gbar + rho * np.einsum("xky,yk->xk", Pbar, Jw)
            gap = float(np.max(np.abs(J_new - J)))
            J = J_new
            if gap < tol * (1.0 - rho):
                break
        else:
            raise RuntimeError(f"atom value iteration did not converge (rho={rho})")
        per_atom[i] = J
    return AtomValueTable(nu_grid=policy.nu_grid, atoms=list(atoms), per_atom=per_atom)


def policy_value_feedback(model: ModelSpec, policy: FeedbackPolicy, table: Optional[AtomValueTable] = None) -> np.ndarray:
    """J(x, nu_k): value of following the feedback policy, clock at zero."""
    table = table if table is not None else solve_atom_values(model, policy)
    return table.value_nodes()


def shifted_value_feedback(model: ModelSpec, policy: FeedbackPolicy, table: Optional[AtomValueTable] = None) -> np.ndarray:
    """V(x, nu_k): value of the one-step-shifted stream, used by the best response."""
    table = table if table is not None else solve_atom_values(model, policy)
    return table.shifted_nodes()
