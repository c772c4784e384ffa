"""Inverse sequential hypothesis testing.

With a known unit continue cost the expected stopping cost is linear in the
misclassification costs, so optimality across environments reduces to linear
inequalities: the action-switch inequalities of each environment and, for
every ordered pair (m, n),

    margin(m, n) = sum_{x,a} pi0(x) (p_n(a|x) - p_m(a|x)) L_m(x, a) + C_n - C_m >= 0,

where C_m is the mean stopping time. Because the continue cost fixes the
scale, no further cost normalisation is applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from ._checks import as_cost_array, policies_indistinguishable
from ._lp import LinearProgram, status_name
from .errors import DegenerateDataset, DimensionMismatch, UnboundedObjective
from .irl_stopping import FeasibilityResult, nias_residuals

POSITIVITY_FLOOR = 1e-6
DEFAULT_BOX = 100.0


@dataclass
class ShtPointEstimate:
    """Regularised max-margin cost estimate.

    Attributes:
        costs: array (M, X, X) with zero diagonal.
        lam: regularisation weight.
        margin_value: achieved objective (total margin minus penalty).
    """

    costs: np.ndarray
    lam: float
    margin_value: float

    def to_dict(self, normalized_error: float | None = None) -> dict:
        return {
            "lambda": float(self.lam),
            "costs": np.asarray(self.costs).tolist(),
            "margin": float(self.margin_value),
            "normalized_error": None if normalized_error is None else float(normalized_error),
        }


def _require_sht_shape(dataset):
    if dataset.n_states != dataset.n_actions:
        raise DimensionMismatch("hypothesis testing needs as many actions as states")
    if not hasattr(dataset, "mean_stopping_times"):
        raise DimensionMismatch("dataset lacks mean stopping times")


def niac_star_margin(dataset, costs, m: int, n: int) -> float:
    """How much worse environment m would do by adopting environment n's behaviour.

    Nonnegative when m's own policy is at least as good under m's costs.
    """
    if m == n:
        raise ValueError("margin needs two distinct environments")
    s = as_cost_array(costs, dataset.policies.shape)
    pi0 = dataset.prior.probs[:, None]
    dp = dataset.policies[n] - dataset.policies[m]
    C = dataset.mean_stopping_times
    return float(np.sum(pi0 * dp * s[m]) + C[n] - C[m])


def niac_star_residuals(dataset, costs) -> dict[str, float]:
    """Negated margins keyed ``"niac*[m=..,n=..]"`` (<= 0 means satisfied)."""
    M = dataset.n_envs
    return {
        f"niac*[m={m},n={n}]": -niac_star_margin(dataset, costs, m, n)
        for m in range(M) for n in range(M) if m != n
    }


def sht_residuals(dataset, costs) -> dict[str, float]:
    out = nias_residuals(dataset, costs)
    out.update(niac_star_residuals(dataset, costs))
    return out


def margin_coefficients(dataset) -> np.ndarray:
    """Coefficients c with sum_{m != n} margin(m, n) = <c, L> (+ terms that cancel).

    c_m(x, a) = pi0(x) * sum_{n != m} (p_n(a|x) - p_m(a|x)).
    """
    p = dataset.policies
    M = p.shape[0]
    c = dataset.prior.probs[None, :, None] * (p.sum(axis=0, keepdims=True) - M * p)
    idx = np.arange(p.shape[1])
    c[:, idx, idx] = 0.0
    return c


def _add_constraints(lp: LinearProgram, dataset, s_vars, m: int):
    """Action-switch and pairwise-margin rows involving environment m's costs only."""
    joint = dataset.joint()[m]
    p_act = joint.sum(axis=0)
    X = dataset.n_states
    for a in range(X):
        if p_act[a] <= 0:
            continue
        post = joint[:, a] / p_act[a]
        for b in range(X):
            if b != a:
                lp.add_le(np.concatenate([s_vars[:, a], s_vars[:, b]]), np.concatenate([post, -post]), 0.0)
    pi0 = dataset.prior.probs[:, None]
    C = dataset.mean_stopping_times
    for n in range(dataset.n_envs):
        if n != m:
            coef = pi0 * (dataset.policies[m] - dataset.policies[n])
            lp.add_le(s_vars.ravel(), coef.ravel(), C[n] - C[m])


def check_feasibility_sht(
    dataset, floor: float = POSITIVITY_FLOOR, check_degenerate: bool = True
) -> FeasibilityResult:
    """Linear feasibility test for optimal hypothesis testing.

    Off-diagonal costs are bounded below by ``floor`` (strict positivity) and
    the LP returns the smallest-total witness.

    Raises:
        DimensionMismatch: X != A or no stopping times.
        DegenerateDataset: all environments show the same policy.
    """
    _require_sht_shape(dataset)
    if check_degenerate and policies_indistinguishable(dataset.policies, dataset.counts):
        raise DegenerateDataset("all environments show the same policy; costs are unidentifiable")
    M, X, _ = dataset.policies.shape
    lp = LinearProgram()
    lower = np.full((X, X), floor)
    upper = np.full((X, X), np.inf)
    lower[np.arange(X), np.arange(X)] = 0.0
    upper[np.arange(X), np.arange(X)] = 0.0
    s = np.stack([lp.add_vars(X * X, lower.ravel(), upper.ravel(), 1.0).reshape(X, X) for _ in range(M)])
    for m in range(M):
        _add_constraints(lp, dataset, s[m], m)
    res = lp.solve()
    status = status_name(res)
    if status != "optimal":
        return FeasibilityResult(False, None, None, {}, status)
    costs = [res.x[s[m]] for m in range(M)]
    return FeasibilityResult(True, costs, np.array(dataset.mean_stopping_times), sht_residuals(dataset, costs), status)


def sht_costs_feasible(dataset, costs, tol: float = 1e-7) -> bool:
    """Whether the given costs satisfy all action-switch and margin inequalities."""
    return max(sht_residuals(dataset, costs).values()) <= tol


def regularized_point_estimate(
    dataset,
    lam: float,
    box: float | None = None,
    constrained: bool = True,
) -> ShtPointEstimate:
    """Maximise total pairwise margin minus ``lam * ||L||^2``.

    Args:
        dataset: SHT dataset.
        lam: regularisation weight; 0 needs a ``box``.
        box: optional upper bound on every cost entry.
        constrained: restrict the search to costs passing the feasibility test
            (action-switch and margin inequalities). Without it the problem is
            separable and solved in closed form as max(0, c / (2 lam)).

    Raises:
        UnboundedObjective: ``lam == 0`` without a box.
    """
    _require_sht_shape(dataset)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if lam == 0 and box is None:
        raise UnboundedObjective("a linear objective needs a cost box when lambda is 0")
    c = margin_coefficients(dataset)
    M, X, _ = c.shape
    if not constrained:
        L = np.full_like(c, np.inf) if lam == 0 else np.maximum(c, 0.0) / (2.0 * lam)
        if lam == 0:
            L = np.where(c > 0, box, 0.0)
        elif box is not None:
            L = np.minimum(L, box)
        idx = np.arange(X)
        L[:, idx, idx] = 0.0
        return ShtPointEstimate(L, float(lam), _objective(c, L, lam))
    L = np.zeros_like(c)
    for m in range(M):
        L[m] = _constrained_env(dataset, c[m], m, lam, box)
    return ShtPointEstimate(L, float(lam), _objective(c, L, lam))


def _objective(c, L, lam) -> float:
    return float(np.sum(c * L) - lam * np.sum(L * L))


def _constrained_env(dataset, c_m, m, lam, box):
    X = dataset.n_states
    off = ~np.eye(X, dtype=bool)
    var = cp.Variable((X, X))
    cons = [var >= 0, cp.diag(var) == 0]
    if box is not None:
        cons.append(var <= box)
    joint = dataset.joint()[m]
    p_act = joint.sum(axis=0)
    for a in range(X):
        if p_act[a] <= 0:
            continue
        post = joint[:, a] / p_act[a]
        for b in range(X):
            if b != a:
                cons.append(post @ (var[:, a] - var[:, b]) <= 0)
    pi0 = dataset.prior.probs[:, None]
    C = dataset.mean_stopping_times
    for n in range(dataset.n_envs):
        if n != m:
            coef = pi0 * (dataset.policies[m] - dataset.policies[n])
            cons.append(cp.sum(cp.multiply(coef, var)) <= C[n] - C[m])
    obj = cp.sum(cp.multiply(c_m, var))
    if lam > 0:
        obj = obj - lam * cp.sum_squares(var)
    prob = cp.Problem(cp.Maximize(obj), cons)
    if not _solve_with_fallback(prob):
        return np.full((X, X), np.nan)
    out = np.where(off, np.maximum(var.value, 0.0), 0.0)
    return out


# interior-point first; CLARABEL occasionally stalls on badly scaled margins
_SOLVER_CHAIN = (
    (cp.CLARABEL, {}),
    (cp.CVXOPT, {}),
    (cp.OSQP, {"eps_abs": 1e-9, "eps_rel": 1e-9, "max_iter": 200_000, "polish": True}),
)


def _solve_with_fallback(prob) -> bool:
    for solver, opts in _SOLVER_CHAIN:
        if solver not in cp.installed_solvers():
            continue
        try:
            prob.solve(solver=solver, **opts)
        except cp.error.SolverError:
            continue
        if prob.status in ("optimal", "optimal_inaccurate"):
            return True
    return False


def normalized_error(estimate, truth) -> float:
    """||L_est - L_true|| / ||L_true|| over all entries (the diagonals are zero)."""
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    return float(np.linalg.norm(est - tru) / np.linalg.norm(tru))


def sample_sht_region(dataset, env: int, fixed_costs, grid, entries=((0, 1), (1, 0)), tol: float = 1e-9):
    """Feasibility over two misclassification costs of environment ``env``.

    Other entries and environments keep ``fixed_costs``. Points where a varied
    entry is not strictly positive are reported infeasible.
    """
    from .irl_stopping import grid_axis

    base = as_cost_array(fixed_costs, dataset.policies.shape).copy()
    ax1, ax2 = grid_axis(grid[0]), grid_axis(grid[1])
    out = []
    for c1 in ax1:
        for c2 in ax2:
            s = base.copy()
            s[env][entries[0]] = c1
            s[env][entries[1]] = c2
            ok = c1 > 0 and c2 > 0 and sht_costs_feasible(dataset, s, tol)
            out.append(((float(c1), float(c2)), bool(ok)))
    return out
