"""Game primitives.

A model couples a finite state space {0,...,d-1}, a 1-D action interval
discretized on a grid, a transition kernel P(x, nu, u) giving the next-state
row for an agent at state x when the population distribution is nu and the
action is u, and a reward stream f(t, x, nu, u).  Rewards are usually
separable, f(t,x,nu,u) = delta(t) * g(x,nu,u), with a nonincreasing summable
discount delta; mixtures of geometrics make the induced control problem
time-inconsistent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

SIMPLEX_TOL = 1e-12
NEG_CLAMP = 1e-14


def check_simplex(nu, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate a probability vector (entries >= 0, sum 1 within tol)."""
    nu = np.asarray(nu, dtype=float)
    if nu.ndim != 1:
        raise ValueError("distribution must be a 1-D vector")
    if np.any(nu < -tol):
        raise ValueError(f"negative mass in distribution {nu}")
    if abs(float(nu.sum()) - 1.0) > tol:
        raise ValueError(f"distribution mass {nu.sum()!r} is not 1")
    return nu


def clamp_simplex(nu) -> np.ndarray:
    """Clamp tiny negative entries (>= -1e-14) to 0 and renormalize."""
    nu = np.asarray(nu, dtype=float)
    if np.any(nu < -NEG_CLAMP):
        raise ValueError(f"distribution has non-negligible negative mass: {nu}")
    nu = np.maximum(nu, 0.0)
    return nu / nu.sum()


@dataclass(frozen=True)
class ActionGrid:
    """Ordered grid of M action values spanning [lo, hi]."""

    lo: float
    hi: float
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.size < 2 or np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing, M >= 2")
        if pts[0] != self.lo or pts[-1] != self.hi:
            raise ValueError("grid must include both endpoints")

    @classmethod
    def uniform(cls, lo: float = 0.0, hi: float = 1.0, m: int = 101) -> "ActionGrid":
        return cls(lo, hi, np.linspace(lo, hi, m))

    @property
    def m(self) -> int:
        return self.points.size

    def nearest_index(self, u: float) -> int:
        """Index of the nearest grid point; ties go to the lower index."""
        if u < self.lo - 1e-12 or u > self.hi + 1e-12:
            raise ValueError(f"action {u} outside [{self.lo}, {self.hi}]")
        return int(np.argmin(np.abs(self.points - u)))


class DiscountSpec:
    """Discount stream delta(t), t = 0, 1, 2, ...; delta(0) = 1 not required."""

    def delta(self, t):
        raise NotImplementedError

    def tail(self, T: int) -> float:
        """Upper bound on sum_{t > T} delta(t)."""
        raise NotImplementedError

    def atoms(self):
        """Geometric-mixture representation [(rho_i, w_i)], or None."""
        return None


@dataclass(frozen=True)
class Exponential(DiscountSpec):
    rho: float

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0,1)")

    def delta(self, t):
        return self.rho ** np.asarray(t, dtype=float)

    def tail(self, T):
        return self.rho ** (T + 1) / (1.0 - self.rho)

    def atoms(self):
        return [(self.rho, 1.0)]


@dataclass(frozen=True)
class WeightedAtoms(DiscountSpec):
    """delta(t) = sum_i w_i * rho_i^t with rho_i in [0,1), w_i > 0, sum w_i = 1."""

    pairs: tuple

    def __post_init__(self):
        pairs = tuple((float(r), float(w)) for r, w in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        if not pairs:
            raise ValueError("need at least one (rho, w) atom")
        for r, w in pairs:
            if not (0.0 <= r < 1.0) or w <= 0.0:
                raise ValueError(f"bad atom ({r}, {w})")
        if abs(sum(w for _, w in pairs) - 1.0) > 1e-12:
            raise ValueError("atom weights must sum to 1")

    def delta(self, t):
        t = np.asarray(t, dtype=float)
        out = sum(w * r**t for r, w in self.pairs)
        return out

    def tail(self, T):
        return sum(w * r ** (T + 1) / (1.0 - r) for r, w in self.pairs)

    def atoms(self):
        return list(self.pairs)


@dataclass(frozen=True)
class TableDiscount(DiscountSpec):
    """Explicit delta(0..T_table) continued by a geometric tail."""

    values: np.ndarray
    tail_rate: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or vals.size == 0 or np.any(vals < 0):
            raise ValueError("discount table must be a nonnegative vector")
        if np.any(np.diff(vals) > 1e-15):
            raise ValueError("discount table must be nonincreasing")
        if not 0.0 <= self.tail_rate < 1.0:
            raise ValueError("tail_rate must lie in [0,1)")

    def delta(self, t):
        t = np.asarray(t)
        n = self.values.size
        inside = self.values[np.minimum(t, n - 1)]
        over = np.maximum(t - (n - 1), 0)
        return inside * self.tail_rate ** over

    def tail(self, T):
        n = self.values.size
        if T + 1 >= n:
            # wholly inside the geometric continuation
            return float(self.values[-1]) * self.tail_rate ** (T + 2 - n) / (1.0 - self.tail_rate)
        head = float(self.values[T + 1 : n].sum())
        geo = float(self.values[-1]) * self.tail_rate / (1.0 - self.tail_rate)
        return head + geo


@dataclass(frozen=True)
class ModelSpec:
    """Immutable bundle of game primitives.

    Either (g, discount) for separable rewards f(t,...) = delta(t)*g(...), or a
    general f with an explicit tail_bound_fn.  reward_sup is an upper bound on
    sup |g| (separable) used by truncation-error bounds.  The optional *_vec
    callables evaluate batches (x array, nu rows, u array) -> array and exist
    purely for speed; results must match the scalar callables.
    """

    d: int
    action_grid: ActionGrid
    transition: Callable
    g: Optional[Callable] = None
    discount: Optional[DiscountSpec] = None
    f: Optional[Callable] = None
    tail_bound_fn: Optional[Callable] = None
    reward_sup: float = 1.0
    name: str = "custom"
    lipschitz_u: Optional[float] = None
    transition_vec: Optional[Callable] = None
    g_vec: Optional[Callable] = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("need at least one state")
        separable = self.g is not None and self.discount is not None
        general = self.f is not None
        if separable == general:
            raise ValueError("provide exactly one of (g, discount) or f")

    @property
    def separable(self) -> bool:
        return self.g is not None


def transition_row(model: ModelSpec, x: int, nu, u: float) -> np.ndarray:
    """P(x, nu, ., u): next-state distribution row; validated stochastic."""
    if not 0 <= x < model.d:
        raise ValueError(f"state {x} outside range(0, {model.d})")
    grid = model.action_grid
    if u < grid.lo - 1e-12 or u > grid.hi + 1e-12:
        raise ValueError(f"action {u} outside [{grid.lo}, {grid.hi}]")
    row = np.asarray(model.transition(x, np.asarray(nu, dtype=float), u), dtype=float)
    if row.shape != (model.d,) or np.any(row < -SIMPLEX_TOL) or abs(row.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"kernel returned an invalid row {row} at (x={x}, u={u})")
    return np.maximum(row, 0.0)


def reward(model: ModelSpec, t: int, x: int, nu, u: float) -> float:
    """f(t, x, nu, u); separable models return delta(t) * g(x, nu, u)."""
    if t < 0:
        raise ValueError("reward time index must be >= 0")
    if model.separable:
        return float(model.discount.delta(t)) * float(model.g(x, np.asarray(nu, float), u))
    return float(model.f(t, x, np.asarray(nu, float), u))


def tail_bound(model: ModelSpec, T: int) -> float:
    """Upper bound on sum_{t > T} sup_{x,nu,u} |f(t, x, nu, u)|."""
    if model.separable:
        return model.reward_sup * float(model.discount.tail(T))
    if model.tail_bound_fn is None:
        raise ValueError("general-reward model needs a tail_bound_fn")
    return float(model.tail_bound_fn(T))


def horizon_for_tail(model: ModelSpec, eps: float, t_max: int = 100_000) -> int:
    """Smallest horizon T with tail_bound(T) <= eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if tail_bound(model, 0) <= eps:
        return 0
    lo, hi = 0, 1
    while tail_bound(model, hi) > eps:
        lo, hi = hi, hi * 2
        if hi > t_max:
            raise ValueError(f"no horizon below {t_max} reaches tail {eps}")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tail_bound(model, mid) <= eps:
            hi = mid
        else:
            lo = mid
    return hi


def transition_rows(model: ModelSpec, x: int, nu, us) -> np.ndarray:
    """Rows P(x, nu, ., u) stacked over an array of actions: shape (len(us), d)."""
    us = np.asarray(us, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if model.transition_vec is not None:
        xs = np.full(us.shape, x, dtype=int)
        return model.transition_vec(xs, np.broadcast_to(nu, (us.size, model.d)), us)
    return np.stack([transition_row(model, x, nu, u) for u in us])


def reward_values(model: ModelSpec, t: int, x: int, nu, us) -> np.ndarray:
    """f(t, x, nu, u) over an array of actions."""
    us = np.asarray(us, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if model.separable and model.g_vec is not None:
        xs = np.full(us.shape, x, dtype=int)
        base = model.g_vec(xs, np.broadcast_to(nu, (us.size, model.d)), us)
        return float(model.discount.delta(t)) * base
    return np.array([reward(model, t, x, nu, u) for u in us])


# ---------------------------------------------------------------------------
# Built-in two-state models.  Both share the kernel
#   P(x, nu, u) = nu/2 + (u, 1-u)/2        for x = 0,
#   P(x, nu, u) = nu/2 + (1-u, u)/2        for x = 1,
# i.e. the action steers half of the next-state mass toward state 0 (from
# state 0) or away from it (from state 1), the other half following the crowd.
# ---------------------------------------------------------------------------


def _two_state_row(x, nu, u):
    a = u if x == 0 else 1.0 - u
    first = 0.5 * nu[0] + 0.5 * a
    return np.array([first, 1.0 - first])


def _two_state_rows_vec(xs, nus, us):
    a = np.where(np.asarray(xs) == 0, us, 1.0 - np.asarray(us, dtype=float))
    first = 0.5 * np.asarray(nus, dtype=float)[:, 0] + 0.5 * a
    return np.stack([first, 1.0 - first], axis=1)


def tracking_model() -> ModelSpec:
    """Two-state model whose reward 1 - |nu(1)*u - 1/4| rewards tracking a
    crowd-dependent target; discount is the half/half mix of geometric rates
    1/3 and 1/4.  The second simplex coordinate nu(1) scales the action.
    """
    return ModelSpec(
        d=2,
        action_grid=ActionGrid.uniform(0.0, 1.0, 101),
        transition=_two_state_row,
        transition_vec=_two_state_rows_vec,
        g=lambda x, nu, u: 1.0 - abs(nu[1] * u - 0.25),
        g_vec=lambda xs, nus, us: 1.0 - np.abs(np.asarray(nus)[:, 1] * np.asarray(us) - 0.25),
        discount=WeightedAtoms(((1.0 / 3.0, 0.5), (0.25, 0.5))),
        reward_sup=1.0,
        lipschitz_u=1.0 + 0.5 * np.sqrt(2.0),
        name="tracking",
    )


def quadratic_model(atoms: Sequence = ((0.1, 0.5), (1.0 / 7.0, 0.5))) -> ModelSpec:
    """Two-state model with concave quadratic reward -u^2 + (1/2 + nu(0))*u + x + 1
    and a geometric-mixture discount whose rates stay at or below 1/7 (heavy
    discounting keeps the feedback best-response map well behaved)."""
    for r, _ in atoms:
        if r > 1.0 / 7.0 + 1e-12:
            raise ValueError("quadratic model requires discount rates <= 1/7")
    return ModelSpec(
        d=2,
        action_grid=ActionGrid.uniform(0.0, 1.0, 101),
        transition=_two_state_row,
        transition_vec=_two_state_rows_vec,
        g=lambda x, nu, u: -u * u + (0.5 + nu[0]) * u + (x + 1.0),
        g_vec=lambda xs, nus, us: (
            -np.asarray(us, float) ** 2
            + (0.5 + np.asarray(nus, float)[:, 0]) * np.asarray(us, float)
            + np.asarray(xs) + 1.0
        ),
        discount=WeightedAtoms(tuple(atoms)),
        reward_sup=3.0,
        lipschitz_u=1.5 + 0.5 * np.sqrt(2.0),
        name="quadratic",
    )


MODEL_REGISTRY = {
    "tracking": tracking_model,
    "quadratic": quadratic_model,
}


def get_model(name: str, **kwargs) -> ModelSpec:
    """Look up a registered builtin by name (or load a tabulated-model file)."""
    if name in MODEL_REGISTRY:
        return MODEL_REGISTRY[name](**kwargs)
    path = Path(name)
    if path.suffix == ".json" and path.exists():
        return load_tabulated_model(path)
    raise KeyError(f"unknown model {name!r}; builtins: {sorted(MODEL_REGISTRY)}")


def load_tabulated_model(source) -> ModelSpec:
    """Build a ModelSpec from a tabulated-kernel JSON file (two states only).

    Schema: {"d": 2, "action_grid": {"lo","hi","m"}, "nu_grid": K,
    "transition": [x][nu_idx][u_idx][y], "g": [x][nu_idx][u_idx],
    "discount": {"atoms": [[rho, w], ...]}}.  nu_idx runs over the uniform
    grid nu(0) = 0, 1/K, ..., 1; off-node (nu, u) values are bilinear in
    (nu(0), u), which preserves stochastic rows.
    """
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            data = json.load(fh)
    else:
        data = source
    d = int(data["d"])
    if d != 2:
        raise ValueError("tabulated models support d=2 only")
    ag = data["action_grid"]
    grid = ActionGrid.uniform(float(ag["lo"]), float(ag["hi"]), int(ag["m"]))
    K = int(data["nu_grid"])
    trans = np.asarray(data["transition"], dtype=float)
    gtab = np.asarray(data["g"], dtype=float)
    if trans.shape != (d, K + 1, grid.m, d) or gtab.shape != (d, K + 1, grid.m):
        raise ValueError("tabulated arrays do not match the declared grids")
    if np.any(trans < -SIMPLEX_TOL) or np.max(np.abs(trans.sum(axis=3) - 1.0)) > 1e-9:
        raise ValueError("tabulated transition rows must be stochastic")
    discount = WeightedAtoms(tuple((r, w) for r, w in data["discount"]["atoms"]))

    def locate(vals, grid_pts):
        idx = np.clip(np.searchsorted(grid_pts, vals, side="right") - 1, 0, len(grid_pts) - 2)
        frac = (vals - grid_pts[idx]) / (grid_pts[idx + 1] - grid_pts[idx])
        return idx, np.clip(frac, 0.0, 1.0)

    nu_pts = np.linspace(0.0, 1.0, K + 1)

    def interp(table, xs, nus, us):
        ki, kf = locate(np.asarray(nus, float)[:, 0], nu_pts)
        ui, uf = locate(np.asarray(us, float), grid.points)
        xs = np.asarray(xs)
        v00 = table[xs, ki, ui]
        v01 = table[xs, ki, ui + 1]
        v10 = table[xs, ki + 1, ui]
        v11 = table[xs, ki + 1, ui + 1]
        kf = kf.reshape(kf.shape + (1,) * (table.ndim - 3))
        uf = uf.reshape(uf.shape + (1,) * (table.ndim - 3))
        return (1 - kf) * ((1 - uf) * v00 + uf * v01) + kf * ((1 - uf) * v10 + uf * v11)

    def t_vec(xs, nus, us):
        return interp(trans, xs, nus, us)

    def g_vec(xs, nus, us):
        return interp(gtab, xs, nus, us)

    return ModelSpec(
        d=d,
        action_grid=grid,
        transition=lambda x, nu, u: t_vec(np.array([x]), nu[None, :], np.array([u]))[0],
        transition_vec=t_vec,
        g=lambda x, nu, u: float(g_vec(np.array([x]), nu[None, :], np.array([u]))[0]),
        g_vec=g_vec,
        discount=discount,
        reward_sup=float(np.max(np.abs(gtab))),
        name="tabulated",
    )
