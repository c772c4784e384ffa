"""Inverse Bayesian search.

The expected cumulative search cost of a policy is linear in the search
costs, J(g, l) = sum_{x,a} pi0(x) g(x, a) l(a). An agent is an optimal
searcher in every environment iff there are positive costs l_m with

    J(g_m, l_m) - J(g_n, l_m) <= -margin   for all m != n,

i.e. each environment's own policy is strictly cheapest under its own costs.
"""

from __future__ import annotations

import numpy as np

from ._lp import LinearProgram, status_name
from .errors import DegenerateDataset, DimensionMismatch
from .irl_stopping import FeasibilityResult, grid_axis

COST_FLOOR = 1e-6
DEFAULT_STRICT_MARGIN = 1e-9


def expected_search_cost(dataset, policy_env: int, costs) -> float:
    """J(g_m, l): expected total search cost of environment ``policy_env``'s policy."""
    l = np.asarray(costs, dtype=float)
    if l.shape != (dataset.n_states,):
        raise DimensionMismatch(f"cost vector of shape {l.shape}, expected ({dataset.n_states},)")
    g = dataset.search_policies[policy_env]
    return float(dataset.prior.probs @ g @ l)


def search_residuals(dataset, costs, strict_margin: float = DEFAULT_STRICT_MARGIN) -> dict[str, float]:
    """J(g_m, l_m) - J(g_n, l_m) + strict_margin keyed ``"niac+[m=..,n=..]"``."""
    M = dataset.n_envs
    out = {}
    for m in range(M):
        own = expected_search_cost(dataset, m, costs[m])
        for n in range(M):
            if n != m:
                out[f"niac+[m={m},n={n}]"] = own - expected_search_cost(dataset, n, costs[m]) + strict_margin
    return out


def _check_distinct(dataset):
    g = dataset.search_policies
    if all(np.array_equal(g[0], g[n]) for n in range(1, dataset.n_envs)):
        raise DegenerateDataset("identical search policies in every environment")


def check_feasibility_search(
    dataset,
    strict_margin: float = DEFAULT_STRICT_MARGIN,
    floor: float = COST_FLOOR,
) -> FeasibilityResult:
    """Linear feasibility test for optimal search.

    Costs are normalised with l_m(0) = 1 and bounded below by ``floor``; the
    strict inequalities hold with at least ``strict_margin`` to spare.

    Raises:
        DegenerateDataset: every environment has the same search policy.
    """
    if dataset.n_envs < 2:
        raise DimensionMismatch("need at least two environments")
    _check_distinct(dataset)
    M, X = dataset.n_envs, dataset.n_states
    lp = LinearProgram()
    lower = np.full(X, floor)
    upper = np.full(X, np.inf)
    lower[0] = upper[0] = 1.0
    l = np.stack([lp.add_vars(X, lower, upper, 1.0) for _ in range(M)])
    pi0 = dataset.prior.probs
    g = dataset.search_policies
    for m in range(M):
        for n in range(M):
            if n != m:
                coef = pi0 @ (g[m] - g[n])
                lp.add_le(l[m], coef, -strict_margin)
    res = lp.solve()
    status = status_name(res)
    if status != "optimal":
        return FeasibilityResult(False, None, None, {}, status)
    costs = [res.x[l[m]] for m in range(M)]
    return FeasibilityResult(True, costs, None, search_residuals(dataset, costs, strict_margin), status)


def search_costs_feasible(dataset, costs, strict_margin: float = DEFAULT_STRICT_MARGIN, tol: float = 1e-12) -> bool:
    l = np.asarray(costs, dtype=float)
    if np.any(l <= 0):
        return False
    return max(search_residuals(dataset, l, strict_margin).values()) <= tol


def sample_search_region(dataset, env: int, fixed_costs, grid, strict_margin: float = DEFAULT_STRICT_MARGIN):
    """Feasibility over (l_env(1), l_env(2)) with l_env(0) kept and other environments fixed.

    Points with a nonpositive cost are reported infeasible.
    """
    base = np.array(fixed_costs, dtype=float)
    ax1, ax2 = grid_axis(grid[0]), grid_axis(grid[1])
    out = []
    for c1 in ax1:
        for c2 in ax2:
            l = base.copy()
            l[env, 1], l[env, 2] = c1, c2
            out.append(((float(c1), float(c2)), search_costs_feasible(dataset, l, strict_margin)))
    return out
