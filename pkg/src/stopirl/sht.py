"""Optimal stopping agents with Gaussian observations.

The optimal policy is computed by value iteration on a discretised belief
simplex and trials are simulated in vectorised batches, one batch per
(environment, state) stratum.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np
from scipy.special import expit, logsumexp

from .beliefs import Belief, GaussianObservationModel, validate_simplex, validate_stop_costs
from .errors import HorizonExceeded, InvalidModel, NoConvergence

DEFAULT_MAX_STEPS = 10_000
CONTINUE = -1


@dataclass(frozen=True, eq=False)
class EnvironmentSet:
    """Shared prior and observation model with one stopping-cost matrix per environment.

    Attributes:
        prior: initial belief over the X states.
        obs_model: per-state Gaussian observation densities.
        stop_costs: array (M, X, A) of stopping costs s_m(x, a).
        continue_cost: constant cost per observation.
    """

    prior: Belief
    obs_model: GaussianObservationModel
    stop_costs: np.ndarray
    continue_cost: float = 1.0

    def __post_init__(self):
        prior = self.prior if isinstance(self.prior, Belief) else validate_simplex(self.prior)
        object.__setattr__(self, "prior", prior)
        costs = np.array([validate_stop_costs(s) for s in self.stop_costs])
        if costs.ndim != 3 or costs.shape[0] < 2:
            raise InvalidModel("need at least two environments")
        if costs.shape[1] != len(prior) or self.obs_model.n_states != len(prior):
            raise InvalidModel("state dimension mismatch between prior, model and costs")
        if all(np.array_equal(costs[0], c) for c in costs[1:]):
            raise InvalidModel("at least two environments must have different stopping costs")
        if not self.continue_cost > 0:
            raise InvalidModel("continue cost must be positive")
        costs.setflags(write=False)
        object.__setattr__(self, "stop_costs", costs)
        object.__setattr__(self, "continue_cost", float(self.continue_cost))

    @property
    def n_envs(self) -> int:
        return self.stop_costs.shape[0]

    @property
    def n_states(self) -> int:
        return self.stop_costs.shape[1]

    @property
    def n_actions(self) -> int:
        return self.stop_costs.shape[2]


@dataclass(frozen=True, eq=False)
class ThresholdPolicy:
    """Stationary stopping policy for one environment.

    The policy stops at belief pi when the cheapest stop action costs no more
    than the continuation value ``c + E V(next belief)``. Continuation values
    are stored on a simplex grid; between grid points they are linearly
    interpolated for two states and read off the nearest grid point otherwise.

    For two states the stop set is summarised by ``upper`` and ``lower``
    (beliefs in state 0): above ``upper`` the agent stops with ``high_action``,
    below ``lower`` with ``low_action``, and continues in between.
    """

    env_index: int
    stop_costs: np.ndarray
    grid: np.ndarray
    continuation: np.ndarray
    values: np.ndarray
    decisions: np.ndarray
    subdivisions: int
    iterations: int
    upper: float | None = None
    lower: float | None = None
    high_action: int | None = None
    low_action: int | None = None
    _lookup: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_states(self) -> int:
        return self.grid.shape[1]

    @property
    def grid_points(self) -> int:
        return self.grid.shape[0]

    @property
    def continue_region_empty(self) -> bool:
        return not np.any(self.decisions == CONTINUE)

    def stop_values(self, beliefs: np.ndarray) -> np.ndarray:
        return beliefs @ self.stop_costs

    def continuation_at(self, beliefs: np.ndarray) -> np.ndarray:
        if self.n_states == 2:
            return np.interp(beliefs[:, 0], self.grid[:, 0], self.continuation)
        return self.continuation[nearest_grid_index(beliefs, self.subdivisions, self._lookup)]

    def decide(self, beliefs) -> np.ndarray:
        """Stop action per row of ``beliefs`` or ``CONTINUE`` (-1)."""
        b = np.atleast_2d(np.asarray(beliefs, dtype=float))
        sv = self.stop_values(b)
        act = np.argmin(sv, axis=1)
        stop = sv[np.arange(len(b)), act] <= self.continuation_at(b)
        return np.where(stop, act, CONTINUE)

    def stop_region_connected(self) -> bool:
        """Whether each action's stop set is connected on the grid."""
        if self.n_states == 2:
            for a in np.unique(self.decisions):
                if a == CONTINUE:
                    continue
                idx = np.flatnonzero(self.decisions == a)
                if idx[-1] - idx[0] + 1 != idx.size:
                    return False
            return True
        coords = np.rint(self.grid * self.subdivisions).astype(int)
        pos = {tuple(c): i for i, c in enumerate(coords)}
        X = self.n_states
        steps = [np.eye(X, dtype=int)[i] - np.eye(X, dtype=int)[j] for i in range(X) for j in range(X) if i != j]
        for a in np.unique(self.decisions):
            if a == CONTINUE:
                continue
            members = set(np.flatnonzero(self.decisions == a).tolist())
            start = next(iter(members))
            seen, stack = {start}, [start]
            while stack:
                g = stack.pop()
                for d in steps:
                    nb = pos.get(tuple(coords[g] + d))
                    if nb is not None and nb in members and nb not in seen:
                        seen.add(nb)
                        stack.append(nb)
            if len(seen) != len(members):
                return False
        return True


@dataclass(frozen=True)
class TrialRecord:
    """Outcome of one trial: environment, true state, stop action and stopping time."""

    env: int
    state: int
    action: int
    tau: int


def simplex_grid(n_states: int, subdivisions: int) -> np.ndarray:
    """All beliefs with coordinates in multiples of ``1/subdivisions``."""
    if n_states == 2:
        p = np.linspace(0.0, 1.0, subdivisions + 1)
        return np.column_stack([p, 1.0 - p])
    pts = []
    for combo in combinations_with_replacement(range(n_states), subdivisions):
        pts.append(np.bincount(combo, minlength=n_states))
    coords = np.array(pts[::-1], dtype=float)
    return coords / subdivisions


def _grid_lookup(grid: np.ndarray, subdivisions: int) -> np.ndarray:
    n = subdivisions + 1
    coords = np.rint(grid[:, :-1] * subdivisions).astype(np.int64)
    flat = np.ravel_multi_index(coords.T, (n,) * coords.shape[1])
    table = np.full(n ** coords.shape[1], -1, dtype=np.int64)
    table[flat] = np.arange(grid.shape[0])
    return table


def nearest_grid_index(beliefs: np.ndarray, subdivisions: int, lookup: np.ndarray) -> np.ndarray:
    """Index of the nearest lattice belief (largest-remainder rounding)."""
    scaled = beliefs * subdivisions
    base = np.floor(scaled)
    rem = scaled - base
    short = (subdivisions - base.sum(axis=1)).round().astype(int)
    order = np.argsort(-rem, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(beliefs.shape[1])[None, :], axis=1)
    coords = (base + (ranks < short[:, None])).astype(np.int64)
    n = subdivisions + 1
    flat = np.ravel_multi_index(coords[:, :-1].T, (n,) * (beliefs.shape[1] - 1))
    return lookup[flat]


def _posterior_nodes(grid: np.ndarray, model: GaussianObservationModel, n_nodes: int):
    """Posteriors after each quadrature observation, and the matching weights.

    Returns arrays of shape (G, X, Q, X) and (G, X, Q).
    """
    z, w = np.polynomial.hermite.hermgauss(n_nodes)
    sd = np.sqrt(model.variances)
    y = model.means[:, None] + np.sqrt(2.0) * sd[:, None] * z[None, :]  # (X, Q)
    ll = model.log_likelihood(y)  # (X, Q, X)
    with np.errstate(divide="ignore"):
        logpi = np.log(grid)  # (G, X)
    logpost = logpi[:, None, None, :] + ll[None, :, :, :]
    logpost = logpost - logsumexp(logpost, axis=-1, keepdims=True)
    post = np.exp(logpost)
    weights = grid[:, :, None] * (w / np.sqrt(np.pi))[None, None, :]
    return post, weights


def solve_sht_policy(
    env: EnvironmentSet,
    env_index: int,
    grid_points: int | None = None,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    quadrature_nodes: int = 32,
) -> ThresholdPolicy:
    """Optimal stationary stopping policy by value iteration on a belief grid.

    Args:
        env: environment set.
        env_index: which environment's stopping costs to optimise.
        grid_points: for two states, the number of grid points (default 1001);
            otherwise the number of subdivisions per simplex edge (default 50).
        tol: sup-norm change of the value function that counts as converged.
        max_iter: iteration budget.
        quadrature_nodes: Gauss-Hermite nodes per state for the observation
            expectation.

    Raises:
        NoConvergence: if the tolerance is not met within ``max_iter``.
    """
    X = env.n_states
    if X == 2:
        n = 1001 if grid_points is None else int(grid_points)
        if n < 101:
            raise InvalidModel("need at least 101 grid points for two states")
        subdivisions = n - 1
    else:
        subdivisions = 50 if grid_points is None else int(grid_points)
    grid = simplex_grid(X, subdivisions)
    s = env.stop_costs[env_index]
    c = env.continue_cost
    post, weights = _posterior_nodes(grid, env.obs_model, quadrature_nodes)
    G = grid.shape[0]
    lookup = None
    if X == 2:
        p_next = post[..., 0].ravel()
        pos = np.clip(p_next * subdivisions, 0.0, subdivisions)
        left = np.minimum(np.floor(pos).astype(np.int64), subdivisions - 1)
        frac = pos - left
        wflat = weights.reshape(G, -1)

        def expect(V):
            vals = (1.0 - frac) * V[left] + frac * V[left + 1]
            return (wflat * vals.reshape(G, -1)).sum(axis=1)
    else:
        lookup = _grid_lookup(grid, subdivisions)
        nxt = nearest_grid_index(post.reshape(-1, X), subdivisions, lookup).reshape(G, -1)
        wflat = weights.reshape(G, -1)

        def expect(V):
            return (wflat * V[nxt]).sum(axis=1)

    stopv = (grid @ s).min(axis=1)
    V = stopv.copy()
    for it in range(1, max_iter + 1):
        W = c + expect(V)
        V_new = np.minimum(stopv, W)
        delta = np.max(np.abs(V_new - V))
        V = V_new
        if delta < tol:
            break
    else:
        raise NoConvergence(f"value iteration residual {delta:.3e} after {max_iter} iterations")
    W = c + expect(V)
    sv_all = grid @ s
    act = np.argmin(sv_all, axis=1)
    decisions = np.where(stopv <= W, act, CONTINUE)
    upper = lower = high = low = None
    if X == 2:
        upper, lower, high, low = _thresholds(grid[:, 0], stopv - W, act)
    for arr in (grid, W, V, decisions):
        arr.setflags(write=False)
    return ThresholdPolicy(
        env_index=env_index,
        stop_costs=np.array(s),
        grid=grid,
        continuation=W,
        values=V,
        decisions=decisions,
        subdivisions=subdivisions,
        iterations=it,
        upper=upper,
        lower=lower,
        high_action=high,
        low_action=low,
        _lookup=lookup,
    )


def _thresholds(p: np.ndarray, gap: np.ndarray, act: np.ndarray):
    """Continue-interval end points in belief of state 0 (grid is increasing in p)."""
    high, low = int(act[-1]), int(act[0])
    cont = np.flatnonzero(gap > 0)
    if cont.size == 0:
        changes = np.flatnonzero(act[1:] != act[:-1])
        edge = float(p[changes[-1] + 1]) if changes.size else 0.0
        return edge, edge, high, low
    i0, i1 = cont[0], cont[-1]

    def root(i, j):
        # linear zero crossing of the gap between neighbours i and j
        gi, gj = gap[i], gap[j]
        return float(p[i] + (p[j] - p[i]) * gi / (gi - gj))

    lower = root(i0 - 1, i0) if i0 > 0 else 0.0
    upper = root(i1, i1 + 1) if i1 < p.size - 1 else 1.0
    return upper, lower, high, low


def _run_batch(policy, env, env_index, state, n, rng, max_steps):
    """Simulate ``n`` trials with true state ``state``; returns (actions, taus)."""
    model = env.obs_model
    mu, sd = model.means[state], np.sqrt(model.variances[state])
    prior = np.asarray(env.prior.probs)
    actions = np.full(n, CONTINUE, dtype=np.int64)
    taus = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    if env.n_states == 2:
        with np.errstate(divide="ignore"):
            lo = np.full(n, np.log(prior[0]) - np.log(prior[1]))
    else:
        with np.errstate(divide="ignore"):
            logb = np.tile(np.log(prior), (n, 1))
    for t in range(1, max_steps + 1):
        y = mu + sd * rng.standard_normal(active.size)
        ll = model.log_likelihood(y)
        if env.n_states == 2:
            lo[active] += ll[:, 0] - ll[:, 1]
            p0 = expit(lo[active])
            beliefs = np.column_stack([p0, 1.0 - p0])
        else:
            lb = logb[active] + ll
            lb -= logsumexp(lb, axis=1, keepdims=True)
            logb[active] = lb
            beliefs = np.exp(lb)
        dec = policy.decide(beliefs)
        done = dec != CONTINUE
        actions[active[done]] = dec[done]
        taus[active[done]] = t
        active = active[~done]
        if active.size == 0:
            return actions, taus
    raise HorizonExceeded(f"{active.size} trials still running after {max_steps} steps")


def run_sht_trial(
    policy: ThresholdPolicy,
    env: EnvironmentSet,
    env_index: int,
    seed: int,
    state: int | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> TrialRecord:
    """One trial: draw the state (unless given), observe until the policy stops.

    The first decision is made after the first observation, so tau >= 1.

    Raises:
        HorizonExceeded: if the trial runs past ``max_steps``.
    """
    if policy.env_index != env_index:
        raise InvalidModel("policy was solved for a different environment")
    rng = np.random.default_rng(seed)
    if state is None:
        state = int(rng.choice(env.n_states, p=env.prior.probs))
    a, t = _run_batch(policy, env, env_index, state, 1, rng, max_steps)
    return TrialRecord(env_index, int(state), int(a[0]), int(t[0]))


def stratum_rng(base_seed: int, env_index: int, state: int) -> np.random.Generator:
    """Independent generator for one (environment, state) stratum."""
    return np.random.default_rng(np.random.SeedSequence(int(base_seed), spawn_key=(env_index, state)))


class ShtTrials(Sequence):
    """Column store of trial outcomes; iterates as TrialRecord objects."""

    def __init__(self, env, state, action, tau, n_envs: int, n_states: int, n_actions: int):
        self.env = np.asarray(env, dtype=np.int64)
        self.state = np.asarray(state, dtype=np.int64)
        self.action = np.asarray(action, dtype=np.int64)
        self.tau = np.asarray(tau, dtype=np.int64)
        self.n_envs, self.n_states, self.n_actions = n_envs, n_states, n_actions

    @classmethod
    def from_records(cls, records, n_envs=None, n_states=None, n_actions=None):
        recs = list(records)
        cols = np.array([(r.env, r.state, r.action, r.tau) for r in recs], dtype=np.int64).reshape(-1, 4)
        return cls(
            cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3],
            n_envs if n_envs is not None else int(cols[:, 0].max(initial=-1)) + 1,
            n_states if n_states is not None else int(cols[:, 1].max(initial=-1)) + 1,
            n_actions if n_actions is not None else int(cols[:, 2].max(initial=-1)) + 1,
        )

    def __len__(self) -> int:
        return self.env.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        return TrialRecord(int(self.env[i]), int(self.state[i]), int(self.action[i]), int(self.tau[i]))


def simulate_sht(
    env: EnvironmentSet,
    trials_per_state: int,
    base_seed: int,
    policies: Sequence[ThresholdPolicy] | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> ShtTrials:
    """Stratified simulation: ``trials_per_state`` trials for every (environment, state).

    Each stratum draws from its own generator seeded by (base_seed, m, x), so the
    output does not depend on evaluation order.
    """
    if trials_per_state < 1:
        raise ValueError("trials_per_state must be at least 1")
    if policies is None:
        policies = [solve_sht_policy(env, m) for m in range(env.n_envs)]
    K = int(trials_per_state)
    cols = {"env": [], "state": [], "action": [], "tau": []}
    for m in range(env.n_envs):
        for x in range(env.n_states):
            a, t = _run_batch(policies[m], env, m, x, K, stratum_rng(base_seed, m, x), max_steps)
            cols["env"].append(np.full(K, m))
            cols["state"].append(np.full(K, x))
            cols["action"].append(a)
            cols["tau"].append(t)
    return ShtTrials(
        *(np.concatenate(cols[k]) for k in ("env", "state", "action", "tau")),
        n_envs=env.n_envs, n_states=env.n_states, n_actions=env.n_actions,
    )
