"""Relaxed (measure-valued) actions on a 1-D grid.

A relaxed action is a probability measure over the action interval, stored
either as dense weights on the model's action grid or as an exact Dirac mass
at an arbitrary point of the interval (useful when an argmax is refined off
the grid).  Rewards and transition rows integrate linearly against it, and
distances between relaxed actions use the exact 1-D Wasserstein-1 metric.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import ActionGrid, ModelSpec, reward, reward_values, transition_row, transition_rows

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class RelaxedAction:
    """Probability measure over actions: dense grid weights xor a point mass."""

    grid: ActionGrid
    weights: Optional[np.ndarray] = None
    point: Optional[float] = None

    def __post_init__(self):
        if (self.weights is None) == (self.point is None):
            raise ValueError("provide exactly one of weights or point")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (self.grid.m,):
                raise ValueError(f"weights must have shape ({self.grid.m},)")
            if np.any(w < -WEIGHT_TOL) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("weights must be a probability vector")
            w = np.maximum(w, 0.0)
            object.__setattr__(self, "weights", w / w.sum())
        else:
            p = float(self.point)
            if p < self.grid.lo - 1e-12 or p > self.grid.hi + 1e-12:
                raise ValueError(f"point {p} outside the action interval")
            object.__setattr__(self, "point", min(max(p, self.grid.lo), self.grid.hi))

    def support(self):
        """(locations, masses) with positive masses only."""
        if self.point is not None:
            return np.array([self.point]), np.array([1.0])
        nz = np.nonzero(self.weights)[0]
        return self.grid.points[nz], self.weights[nz]

    def mean(self) -> float:
        locs, w = self.support()
        return float(locs @ w)

    def is_dirac(self) -> bool:
        return self.point is not None or np.count_nonzero(self.weights) == 1


def dirac(grid: ActionGrid, u: float) -> RelaxedAction:
    """Point mass snapped to the nearest grid point (ties to the lower index)."""
    w = np.zeros(grid.m)
    w[grid.nearest_index(u)] = 1.0
    return RelaxedAction(grid, weights=w)


def dirac_point(grid: ActionGrid, u: float) -> RelaxedAction:
    """Exact point mass at u, not snapped to the grid."""
    return RelaxedAction(grid, point=u)


def integrate_reward(model: ModelSpec, t: int, x: int, nu, pi: RelaxedAction) -> float:
    """E_{u ~ pi}[ f(t, x, nu, u) ]."""
    locs, w = pi.support()
    if locs.size == 1:
        return reward(model, t, x, nu, float(locs[0]))
    return float(w @ reward_values(model, t, x, nu, locs))


def integrate_transition(model: ModelSpec, x: int, nu, pi: RelaxedAction) -> np.ndarray:
    """E_{u ~ pi}[ P(x, nu, ., u) ]: the integrated next-state row."""
    locs, w = pi.support()
    if locs.size == 1:
        return transition_row(model, x, nu, float(locs[0]))
    return w @ transition_rows(model, x, nu, locs)


def transition_matrix(model: ModelSpec, nu, actions: Sequence[RelaxedAction]) -> np.ndarray:
    """Row-stack the integrated rows of each state's relaxed action: (d, d)."""
    if len(actions) != model.d:
        raise ValueError(f"need one relaxed action per state ({model.d})")
    return np.stack([integrate_transition(model, x, nu, actions[x]) for x in range(model.d)])


def wasserstein1(a: RelaxedAction, b: RelaxedAction) -> float:
    """Exact W1 distance between two relaxed actions.

    Merges the supports and integrates |F_a - F_b| between consecutive
    breakpoints, which is exact for discrete measures in one dimension.
    """
    la, wa = a.support()
    lb, wb = b.support()
    locs = np.concatenate([la, lb])
    signed = np.concatenate([wa, -wb])
    order = np.argsort(locs, kind="stable")
    locs, signed = locs[order], signed[order]
    cdf_gap = np.cumsum(signed)[:-1]
    return float(np.abs(cdf_gap) @ np.diff(locs))


@dataclass(frozen=True)
class ArgmaxSet:
    """All indices within tolerance of the max, plus the lowest as canonical."""

    indices: tuple
    canonical: int


def argmax_with_ties(values, tie_tol: float = 1e-9) -> ArgmaxSet:
    """Indices attaining the max up to a relative tolerance.

    An index ties if values[i] >= max - tie_tol * max(1, |max|).  The
    canonical representative is the lowest tied index, making downstream
    selections deterministic.
    """
    vals = np.asarray(values, dtype=float)
    if vals.ndim != 1 or vals.size == 0:
        raise ValueError("values must be a nonempty vector")
    top = float(vals.max())
    thresh = top - tie_tol * max(1.0, abs(top))
    idx = tuple(int(i) for i in np.nonzero(vals >= thresh)[0])
    return ArgmaxSet(indices=idx, canonical=idx[0])
