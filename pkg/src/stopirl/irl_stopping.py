"""Revealed-preference test for optimal stopping agents observed in several environments.

Given the prior and each environment's conditional stop-action policy, the
agent is consistent with Bayes-optimal stopping iff there are stopping costs
s_m(x, a) >= 0 such that

* no action switch improves the expected stopping cost under the posterior
  of the chosen action (action-switch inequalities), and
* no cyclic reassignment of observed policies to environments lowers the
  total surrogate stopping cost (cycle inequalities), equivalently there are
  continue-cost potentials C_m >= 0 with
  ``own_cost_m + C_m <= surrogate_cost(policy n, costs m) + C_n``.

Both forms are encoded as linear programs. The surrogate cost contains a
minimum over actions, which enters through hypograph variables
``u <= sum_x joint_n(x, a) s_m(x, b)`` for every b.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations, permutations

import numpy as np

from ._checks import as_cost_array, policies_indistinguishable
from ._lp import LinearProgram, status_name
from .beliefs import Belief
from .errors import (
    DegenerateDataset,
    DimensionMismatch,
    InfeasibleSUMCOST,
    InvalidCycle,
    TooManyEnvironments,
    UnsupportedAction,
)

FEASIBILITY_TOL = 1e-7
DEFAULT_CYCLE_CAP = 8


@dataclass
class FeasibilityResult:
    """Outcome of a feasibility test.

    Attributes:
        feasible: whether a witness exists.
        witness_costs: per-environment cost arrays of the witness (None when infeasible).
        witness_continue_costs: continue-cost potentials C_m (stopping tests only).
        residuals: inequality id -> residual; <= 0 means satisfied.
        solver_status: "optimal", "infeasible" or "numerical-failure".
    """

    feasible: bool
    witness_costs: list | None
    witness_continue_costs: np.ndarray | None
    residuals: dict[str, float] = field(default_factory=dict)
    solver_status: str = "optimal"

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values(), default=float("-inf"))

    def to_dict(self) -> dict:
        witness = None
        if self.witness_costs is not None:
            witness = {"costs": [np.asarray(c).tolist() for c in self.witness_costs]}
            if self.witness_continue_costs is not None:
                witness["continue_costs"] = np.asarray(self.witness_continue_costs).tolist()
        return {
            "feasible": bool(self.feasible),
            "witness": witness,
            "residuals": {k: float(v) for k, v in sorted(self.residuals.items())},
            "status": self.solver_status,
        }


# ----------------------------------------------------------- direct formulas

def posterior_from_policy(dataset, env: int, action: int) -> Belief:
    """Belief over states given that ``action`` was chosen in environment ``env``.

    Raises:
        UnsupportedAction: if the action has zero probability in that environment.
    """
    joint = dataset.prior.probs * dataset.policies[env][:, action]
    total = joint.sum()
    if total <= 0.0:
        raise UnsupportedAction(f"action {action} is never chosen in environment {env}")
    return Belief(joint / total)


def _costs(dataset, costs) -> np.ndarray:
    return as_cost_array(costs, dataset.policies.shape)


def nias_residuals(dataset, costs) -> dict[str, float]:
    """Expected gain of each action switch a -> b under the posterior of a.

    Keys are ``"nias[m=..,a=..,b=..]"``; actions never chosen are skipped.
    """
    s = _costs(dataset, costs)
    out = {}
    for m in range(dataset.n_envs):
        for a in range(dataset.n_actions):
            try:
                post = posterior_from_policy(dataset, m, a).probs
            except UnsupportedAction:
                continue
            for b in range(dataset.n_actions):
                if b != a:
                    out[f"nias[m={m},a={a},b={b}]"] = float(post @ (s[m][:, a] - s[m][:, b]))
    return out


def own_stopping_cost(dataset, m: int, costs) -> float:
    """Expected stopping cost of environment ``m``'s policy under its own costs."""
    s = _costs(dataset, costs)
    return float(np.sum(dataset.joint()[m] * s[m]))


def surrogate_stopping_cost(dataset, m: int, n: int, costs) -> float:
    """Cost of re-optimising environment ``m``'s stopping posteriors under costs ``n``.

    Sum over actions a of p_m(a) * min_b E[s_n(x, b) | a].
    """
    s = _costs(dataset, costs)
    joint = dataset.joint()[m]  # (X, A)
    # per chosen action a, the expected cost of replying with b: joint[:, a] @ s_n[:, b]
    table = joint.T @ s[n]
    return float(table.min(axis=1).sum())


def niac_cycle_residual(dataset, costs, cycle) -> float:
    """Sum over consecutive pairs (m, m') of own_cost(m) - surrogate(policy m, costs m').

    Raises:
        InvalidCycle: fewer than two or repeated environment indices.
    """
    cyc = [int(c) for c in cycle]
    if len(cyc) < 2 or len(set(cyc)) != len(cyc) or min(cyc) < 0 or max(cyc) >= dataset.n_envs:
        raise InvalidCycle(f"invalid cycle {cycle!r}")
    total = 0.0
    for i, m in enumerate(cyc):
        nxt = cyc[(i + 1) % len(cyc)]
        total += own_stopping_cost(dataset, m, costs) - surrogate_stopping_cost(dataset, m, nxt, costs)
    return total


def potential_residuals(dataset, costs, continue_costs) -> dict[str, float]:
    """own_cost(m) + C_m - surrogate(policy n, costs m) - C_n for all m != n."""
    C = np.asarray(continue_costs, dtype=float)
    out = {}
    for m in range(dataset.n_envs):
        own = own_stopping_cost(dataset, m, costs)
        for n in range(dataset.n_envs):
            if n != m:
                out[f"niac[m={m},n={n}]"] = own + C[m] - surrogate_stopping_cost(dataset, n, m, costs) - C[n]
    return out


def simple_cycles(n_envs: int):
    """All directed simple cycles of length >= 2 on ``n_envs`` nodes, each listed once."""
    for k in range(2, n_envs + 1):
        for subset in combinations(range(n_envs), k):
            head, rest = subset[0], subset[1:]
            for perm in permutations(rest):
                yield (head, *perm)


def cycle_residuals(dataset, costs, cycles) -> dict[str, float]:
    return {f"niac[cycle={'-'.join(map(str, c))}]": niac_cycle_residual(dataset, costs, c) for c in cycles}


# ------------------------------------------------------------------ LP model

def _default_zero_diagonal(dataset, zero_diagonal):
    if zero_diagonal is None:
        return dataset.n_states == dataset.n_actions
    if zero_diagonal and dataset.n_states != dataset.n_actions:
        raise DimensionMismatch("a zero diagonal needs as many actions as states")
    return bool(zero_diagonal)


def _check_identifiable(dataset):
    if policies_indistinguishable(dataset.policies, dataset.counts):
        raise DegenerateDataset("all environments show the same policy; costs are unidentifiable")


class _StoppingModel:
    """Variable layout shared by the stopping LPs."""

    def __init__(self, dataset, zero_diagonal: bool, cost_weight: float = 1.0):
        self.ds = dataset
        M, X, A = dataset.policies.shape
        self.lp = LinearProgram()
        upper = np.full((X, A), np.inf)
        if zero_diagonal:
            upper[np.arange(X), np.arange(X)] = 0.0
        self.s = np.stack([self.lp.add_vars(X * A, 0.0, upper.ravel(), cost_weight).reshape(X, A) for _ in range(M)])
        self.joint = dataset.joint()
        self.p_act = self.joint.sum(axis=1)
        self.zero_diagonal = zero_diagonal
        self.u = {}

    def add_nias(self):
        ds, lp = self.ds, self.lp
        for m in range(ds.n_envs):
            for a in range(ds.n_actions):
                if self.p_act[m, a] <= 0:
                    continue
                post = self.joint[m][:, a] / self.p_act[m, a]
                for b in range(ds.n_actions):
                    if b != a:
                        cols = np.concatenate([self.s[m][:, a], self.s[m][:, b]])
                        lp.add_le(cols, np.concatenate([post, -post]), 0.0)

    def add_normalization(self):
        X, A = self.ds.n_states, self.ds.n_actions
        mask = np.ones((X, A), dtype=bool)
        if X == A:
            mask[np.arange(X), np.arange(X)] = False
        for m in range(self.ds.n_envs):
            self.lp.add_le(self.s[m][mask], -1.0, -1.0)

    def surrogate_vars(self, n: int, m: int) -> np.ndarray:
        """Hypograph variables whose sum bounds surrogate(policy n, costs m) from below."""
        key = (n, m)
        if key in self.u:
            return self.u[key]
        lp = self.lp
        acts = np.flatnonzero(self.p_act[n] > 0)
        u = lp.add_vars(acts.size, lower=-np.inf)
        for ui, a in zip(u, acts):
            w = self.joint[n][:, a]
            for b in range(self.ds.n_actions):
                lp.add_le(np.concatenate([[ui], self.s[m][:, b]]), np.concatenate([[1.0], -w]), 0.0)
        self.u[key] = u
        return u

    def own_cost_terms(self, m: int):
        return self.s[m].ravel(), self.joint[m].ravel()

    def witness(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[self.s[m]] for m in range(self.ds.n_envs)]


def check_feasibility_stopping(
    dataset,
    mode: str = "potentials",
    zero_diagonal: bool | None = None,
    cycle_cap: int = DEFAULT_CYCLE_CAP,
    check_degenerate: bool = True,
) -> FeasibilityResult:
    """Test whether some stopping costs rationalise the dataset.

    Costs are normalised so that each environment's off-diagonal entries sum
    to at least 1, which rules out the all-zero solution; the inequalities are
    homogeneous, so this keeps every nonzero cost direction. The LP minimises
    the total cost, returning the smallest witness.

    Args:
        dataset: a StoppingDataset (or SHTDataset).
        mode: "potentials" (continue-cost potentials) or "cycles" (all simple
            cycles enumerated).
        zero_diagonal: fix s_m(x, x) = 0. Defaults to True when X = A; with a
            free diagonal, state-only costs s(x, a) = f(x) rationalise every
            dataset.
        cycle_cap: largest M accepted in cycles mode.
        check_degenerate: reject datasets whose policies agree up to noise.

    Raises:
        DegenerateDataset: all environments show the same policy.
        TooManyEnvironments: cycles mode with M above ``cycle_cap``.
    """
    if mode not in ("potentials", "cycles"):
        raise ValueError(f"unknown mode {mode!r}")
    M = dataset.n_envs
    if mode == "cycles" and M > cycle_cap:
        raise TooManyEnvironments(f"{M} environments exceed the cycle cap of {cycle_cap}")
    if check_degenerate:
        _check_identifiable(dataset)
    zd = _default_zero_diagonal(dataset, zero_diagonal)
    model = _StoppingModel(dataset, zd)
    lp = model.lp
    model.add_nias()
    model.add_normalization()
    C = None
    if mode == "potentials":
        C = lp.add_vars(M, 0.0)
        for m in range(M):
            cols, vals = model.own_cost_terms(m)
            for n in range(M):
                if n == m:
                    continue
                u = model.surrogate_vars(n, m)
                lp.add_le(
                    np.concatenate([cols, u, [C[m], C[n]]]),
                    np.concatenate([vals, -np.ones(u.size), [1.0, -1.0]]),
                    0.0,
                )
    else:
        cycles = list(simple_cycles(M))
        for cyc in cycles:
            cols, vals = [], []
            for i, m in enumerate(cyc):
                nxt = cyc[(i + 1) % len(cyc)]
                c, v = model.own_cost_terms(m)
                u = model.surrogate_vars(m, nxt)
                cols += [c, u]
                vals += [v, -np.ones(u.size)]
            lp.add_le(np.concatenate(cols), np.concatenate(vals), 0.0)
    res = lp.solve()
    status = status_name(res)
    if status != "optimal":
        return FeasibilityResult(False, None, None, {}, status)
    costs = model.witness(res.x)
    residuals = nias_residuals(dataset, costs)
    if mode == "potentials":
        Cw = res.x[C] - res.x[C].min()
        residuals.update(potential_residuals(dataset, costs, Cw))
    else:
        residuals.update(cycle_residuals(dataset, costs, cycles))
        Cw = reconstruct_continue_costs(dataset, costs, tol=1e-6)
    return FeasibilityResult(True, costs, Cw, residuals, status)


def reconstruct_continue_costs(dataset, costs, tol: float = 1e-9) -> np.ndarray:
    """Continue costs C_m consistent with the given stopping costs, normalised to min 0.

    Solves ``own_cost_m + C_m <= surrogate(policy n, costs m) + C_n`` with C >= 0,
    allowing ``tol`` slack for round-off in the supplied costs.

    Raises:
        InfeasibleSUMCOST: if no such C exists.
    """
    M = dataset.n_envs
    lp = LinearProgram()
    C = lp.add_vars(M, 0.0, cost=1.0)
    for m in range(M):
        own = own_stopping_cost(dataset, m, costs)
        for n in range(M):
            if n != m:
                rhs = surrogate_stopping_cost(dataset, n, m, costs) - own + tol
                lp.add_le([C[m], C[n]], [1.0, -1.0], rhs)
    res = lp.solve()
    if res.status != 0:
        raise InfeasibleSUMCOST("no continue costs satisfy the potential inequalities")
    x = res.x[C]
    return x - x.min()


def _potentials_exist(W: np.ndarray, tol: float) -> bool:
    """Difference constraints C_m - C_n <= W[m, n] are solvable iff no negative cycle."""
    D = W.copy()
    np.fill_diagonal(D, 0.0)
    for k in range(D.shape[0]):
        D = np.minimum(D, D[:, [k]] + D[[k], :])
    return bool(np.all(np.diag(D) >= -tol))


def stopping_costs_feasible(dataset, costs, tol: float = FEASIBILITY_TOL) -> bool:
    """Whether the given (unnormalised) costs satisfy every inequality."""
    s = _costs(dataset, costs)
    if any(np.all(s[m] == 0) for m in range(dataset.n_envs)):
        return False
    if max(nias_residuals(dataset, s).values(), default=0.0) > tol:
        return False
    M = dataset.n_envs
    W = np.zeros((M, M))
    for m in range(M):
        own = own_stopping_cost(dataset, m, s)
        for n in range(M):
            if n != m:
                W[m, n] = surrogate_stopping_cost(dataset, n, m, s) - own
    return _potentials_exist(W, tol)


def grid_axis(spec) -> np.ndarray:
    """Grid axis from ``(min, max, steps)`` or an explicit sequence."""
    if isinstance(spec, tuple) and len(spec) == 3:
        lo, hi, steps = spec
        return np.linspace(float(lo), float(hi), int(steps))
    return np.asarray(spec, dtype=float)


def sample_feasible_region(dataset, env: int, fixed_costs, grid, entries=None):
    """Feasibility over a 2-D slice of environment ``env``'s costs.

    Args:
        dataset: stopping dataset.
        env: environment whose two free cost entries are scanned.
        fixed_costs: full (M, X, A) cost array; entries outside the slice are kept.
        grid: pair of axes, each ``(min, max, steps)`` or a sequence of values.
        entries: the two (x, a) positions that vary; defaults to (0, 1) and (1, 0).

    Returns:
        list of ((cost_1, cost_2), feasible) in row-major grid order. All-zero
        cost matrices are reported infeasible.
    """
    entries = entries or ((0, 1), (1, 0))
    base = _costs(dataset, fixed_costs).copy()
    ax1, ax2 = grid_axis(grid[0]), grid_axis(grid[1])
    out = []
    for c1 in ax1:
        for c2 in ax2:
            s = base.copy()
            s[env][entries[0]] = c1
            s[env][entries[1]] = c2
            out.append(((float(c1), float(c2)), stopping_costs_feasible(dataset, s)))
    return out
