"""Finite-sample IRL detectors and their error bounds.

A detector declares H0 (optimal agent) when the feasibility test passes on
the empirical dataset. How far the empirical policies are from the feasibility
boundary (eps1 = squared distance to the nearest passing dataset, eps2 = to
the nearest failing one) controls the posterior error bounds below.

Both distances are nonconvex minimisations. ``min_perturbation_feasible``
alternates between projecting the policies onto the set rationalised by fixed
costs (a convex QP) and re-choosing the costs; ``min_perturbation_infeasible``
bisects along random directions. Each returns an upper estimate, which keeps
the bounds conservative in the direction documented per function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cvxpy as cp
import numpy as np
from scipy.optimize import minimize

from ._lp import LinearProgram
from .errors import DegenerateDataset, InvalidAlphaStar, MissingTauMax, SchemaViolation
from .irl_search import COST_FLOOR, DEFAULT_STRICT_MARGIN, check_feasibility_search
from .irl_sht import POSITIVITY_FLOOR, check_feasibility_sht
from .irl_stopping import check_feasibility_stopping

KINDS = ("stopping", "sht", "search")
# interior margin for projected datasets, so they pass the LP test despite round-off
_INTERIOR = 1e-7


@dataclass
class ErrorBounds:
    """Posterior and raw error bounds of an IRL detector.

    ``type1_bound`` maps the posterior Type-II bound and ``type2_bound`` the
    posterior Type-I bound through x / (1 - x) (infinite once x >= 1).
    """

    kind: str
    eps1: float
    eps2: float
    posterior_type1_bound: float
    posterior_type2_bound: float
    type1_bound: float
    type2_bound: float
    condition_ok: bool
    q: float | None = None
    j: float | None = None
    g: float | None = None
    h: float | None = None
    i: float | None = None
    formula: str = ""
    operative: str | None = None

    @property
    def vacuous(self) -> dict[str, bool]:
        return {
            "posterior_type1": self.posterior_type1_bound >= 1.0,
            "posterior_type2": self.posterior_type2_bound >= 1.0,
        }

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            if isinstance(v, float) and not math.isfinite(v):
                v = "inf" if v > 0 else "-inf"
            out[name] = v
        out["vacuous"] = self.vacuous
        return out


def raw_bound(posterior: float) -> float:
    """x / (1 - x), or +inf when x >= 1."""
    return posterior / (1.0 - posterior) if posterior < 1.0 else math.inf


def _exp_bound(scale: float, eps: float, denom: float) -> float:
    return scale * math.exp(-eps / denom)


# ------------------------------------------------------------- sample sizes

def _log_terms(counts, X: int):
    z = 2.0 * np.asarray(counts, dtype=float) / X
    return z, np.log(z)


def sample_size_condition(counts, X: int, M: int, kind: str = "stopping", eps: float = 0.0, tau_max=None):
    """Whether max(eps1, eps2) >= q - j for the given counts.

    Returns:
        (condition_ok, q, j)
    """
    K = np.asarray(counts, dtype=float)
    if K.shape != (M, X):
        raise ValueError(f"counts must have shape ({M}, {X})")
    if np.any(K < 1):
        raise ValueError("every count must be at least 1")
    z, lz = _log_terms(K, X)
    if kind in ("stopping", "search"):
        q = float(np.sum(lz / z))
        j = float(np.sum(1.0 / z) * lz.min())
    elif kind == "sht":
        if tau_max is None:
            raise MissingTauMax("the hypothesis-testing condition needs tau_max")
        Kbar = K.sum(axis=1) / float(tau_max) ** 2
        q = float(np.sum(lz / z) + np.sum(np.log(2 * Kbar) / (2 * Kbar)))
        j1 = lz.min()
        j2 = np.log(2 * Kbar).min()
        j = float(min(j1, j2) * (X * np.sum(1.0 / K) / 2 + np.sum(1.0 / Kbar) / 2))
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return bool(eps >= q - j), q, j


# ------------------------------------------------------------------- bounds

def stopping_g(counts, X: int) -> float:
    """(X sum 1/K) * prod (2K/X)^((1/K) / sum 1/K)."""
    K = np.asarray(counts, dtype=float).ravel()
    Kt = 1.0 / K
    S = Kt.sum()
    return float(X * S * np.exp(np.sum(Kt / S * np.log(2 * K / X))))


def sht_ghi(counts, X: int, tau_max: int):
    """g, h and i = g h for the hypothesis-testing bound."""
    K = np.asarray(counts, dtype=float)
    tau2 = float(tau_max) ** 2
    Km = K.sum(axis=1)
    g = X * np.sum(1.0 / K) + tau2 * np.sum(1.0 / Km)
    log_inner = (tau2 / Km) * np.log(2 * Km / tau2) + np.sum((X / K) * np.log(2 * K / X), axis=1)
    h = math.exp(float(np.sum(log_inner)) / g)
    return float(g), float(h), float(g * h)


def _finish(bounds: ErrorBounds) -> ErrorBounds:
    bounds.type1_bound = raw_bound(bounds.posterior_type2_bound)
    bounds.type2_bound = raw_bound(bounds.posterior_type1_bound)
    return bounds


def _resolve_eps(dataset, eps1, eps2, **kw):
    if eps1 is None or eps2 is None:
        feasible = _feasible(dataset)
        if eps1 is None:
            eps1 = 0.0 if feasible else min_perturbation_feasible(dataset, **kw.get("eps1_options", {}))
        if eps2 is None:
            eps2 = 0.0 if not feasible else min_perturbation_infeasible(dataset, **kw.get("eps2_options", {}))
    return float(eps1), float(eps2)


def stopping_error_bounds(dataset, eps1=None, eps2=None, **kw) -> ErrorBounds:
    """Bounds for the generic stopping detector.

    Posterior bounds g exp(-eps / sum 1/K); eps values are estimated when not given.
    """
    eps1, eps2 = _resolve_eps(dataset, eps1, eps2, **kw)
    K = dataset.counts
    X, M = dataset.n_states, dataset.n_envs
    S = float(np.sum(1.0 / K.astype(float)))
    g = stopping_g(K, X)
    ok, q, j = sample_size_condition(K, X, M, "stopping", max(eps1, eps2))
    return _finish(ErrorBounds(
        kind="stopping", eps1=eps1, eps2=eps2,
        posterior_type1_bound=_exp_bound(g, eps1, S),
        posterior_type2_bound=_exp_bound(g, eps2, S),
        type1_bound=0.0, type2_bound=0.0, condition_ok=ok, q=q, j=j, g=g,
        formula="g*exp(-eps/sum(1/K)); g=(X*sum(1/K))*prod((2K/X)^((1/K)/sum(1/K)))",
    ))


def sht_error_bounds(dataset, eps1=None, eps2=None, tau_max=None, **kw) -> ErrorBounds:
    """Bounds for the hypothesis-testing detector, i exp(-2 eps / g).

    Raises:
        MissingTauMax: neither the dataset nor the call supplies tau_max.
    """
    tau = tau_max if tau_max is not None else getattr(dataset, "tau_max", None)
    if tau is None:
        raise MissingTauMax("the hypothesis-testing bound needs a stopping-time bound tau_max")
    eps1, eps2 = _resolve_eps(dataset, eps1, eps2, **kw)
    K = dataset.counts
    X, M = dataset.n_states, dataset.n_envs
    g, h, i = sht_ghi(K, X, tau)
    ok, q, j = sample_size_condition(K, X, M, "sht", max(eps1, eps2), tau_max=tau)
    return _finish(ErrorBounds(
        kind="sht", eps1=eps1, eps2=eps2,
        posterior_type1_bound=i * math.exp(-2.0 * eps1 / g),
        posterior_type2_bound=i * math.exp(-2.0 * eps2 / g),
        type1_bound=0.0, type2_bound=0.0, condition_ok=ok, q=q, j=j, g=g, h=h, i=i,
        formula=(
            "i*exp(-2*eps/g); g=X*sum(1/K_xm)+tau^2*sum(1/K_m); "
            "h=prod_m((2K_m/tau^2)^(tau^2/K_m)*prod_x((2K_xm/X)^(X/K_xm)))^(1/g); i=g*h"
        ),
    ))


def search_error_bounds(dataset, alpha_star: float, eps1=None, eps2=None, **kw) -> ErrorBounds:
    """Bounds for the search detector, (1-a*) X / (eps a*^2) (sum K^-1/2)^2.

    A zero eps gives an infinite (vacuous) bound.

    Raises:
        InvalidAlphaStar: alpha_star outside (0, 1).
    """
    if not (0.0 < alpha_star < 1.0):
        raise InvalidAlphaStar(f"alpha_star must lie in (0, 1), got {alpha_star}")
    eps1, eps2 = _resolve_eps(dataset, eps1, eps2, **kw)
    K = np.asarray(dataset.counts, dtype=float)
    X = dataset.n_states
    scale = (1.0 - alpha_star) * X / alpha_star**2 * float(np.sum(K**-0.5)) ** 2

    def post(eps):
        return scale / eps if eps > 0 else math.inf

    return _finish(ErrorBounds(
        kind="search", eps1=eps1, eps2=eps2,
        posterior_type1_bound=post(eps1), posterior_type2_bound=post(eps2),
        type1_bound=0.0, type2_bound=0.0, condition_ok=True,
        formula="(1-alpha*)*X/(eps*alpha*^2)*(sum K^-1/2)^2",
    ))


# ----------------------------------------------------------------- detector

@dataclass
class DetectorResult:
    hypothesis: str
    bounds: ErrorBounds | None
    feasibility: object

    def to_dict(self) -> dict:
        return {
            "hypothesis": self.hypothesis,
            "bounds": None if self.bounds is None else self.bounds.to_dict(),
            "feasibility": self.feasibility.to_dict(),
        }


def _kind_of(dataset) -> str:
    return dataset.kind


def _test(dataset, check_degenerate=True):
    kind = _kind_of(dataset)
    if kind == "sht":
        return check_feasibility_sht(dataset, check_degenerate=check_degenerate)
    if kind == "search":
        try:
            return check_feasibility_search(dataset)
        except DegenerateDataset:
            if check_degenerate:
                raise
            # identical search policies cannot meet the strict inequalities
            from .irl_stopping import FeasibilityResult

            return FeasibilityResult(False, None, None, {}, "infeasible")
    return check_feasibility_stopping(dataset, check_degenerate=check_degenerate)


def _feasible(dataset) -> bool:
    try:
        return _test(dataset, check_degenerate=False).feasible
    except DegenerateDataset:
        return False


def irl_detector(dataset, kind: str | None = None, bounds: bool = True, alpha_star: float | None = None,
                 eps1=None, eps2=None, **kw) -> DetectorResult:
    """H0 when the feasibility set of the matching test is nonempty, else H1.

    Error bounds are attached unless ``bounds`` is False (search needs
    ``alpha_star``). Under H0 only the posterior Type-II bound is operative
    and under H1 only the posterior Type-I bound.
    """
    kind = kind or _kind_of(dataset)
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    if kind != "stopping" and _kind_of(dataset) != kind:
        raise ValueError(f"a {kind} detector needs a {kind} dataset")
    if kind == "stopping" and _kind_of(dataset) == "search":
        raise ValueError("a stopping detector needs a stopping dataset")
    # degeneracy only blocks cost identification; the verdict needs feasibility alone
    if kind == _kind_of(dataset):
        res = _test(dataset, check_degenerate=False)
    else:
        res = check_feasibility_stopping(dataset, check_degenerate=False)
    hyp = "H0" if res.feasible else "H1"
    eb = None
    if bounds:
        if res.feasible:
            eps1 = 0.0 if eps1 is None else eps1
        else:
            eps2 = 0.0 if eps2 is None else eps2
        if kind == "sht":
            eb = sht_error_bounds(dataset, eps1, eps2, **kw)
        elif kind == "search":
            eb = None if alpha_star is None else search_error_bounds(dataset, alpha_star, eps1, eps2, **kw)
        else:
            eb = stopping_error_bounds(_as_stopping(dataset), eps1, eps2, **kw)
        if eb is not None:
            eb.operative = "posterior_type2" if res.feasible else "posterior_type1"
    return DetectorResult(hyp, eb, res)


def _as_stopping(dataset):
    if _kind_of(dataset) == "stopping":
        return dataset
    from .datasets import StoppingDataset

    return StoppingDataset(dataset.prior, dataset.policies, dataset.counts)


# ------------------------------------------------------ perturbation spaces

class _Space:
    """Flat coordinates of the perturbable part of a dataset."""

    def __init__(self, dataset):
        self.ds = dataset
        self.kind = _kind_of(dataset)
        if self.kind == "search":
            self.shape = dataset.search_policies.shape
            self.z0 = dataset.search_policies.ravel().astype(float)
        else:
            self.shape = dataset.policies.shape
            z = dataset.policies.ravel().astype(float)
            if self.kind == "sht":
                z = np.concatenate([z, dataset.mean_stopping_times])
            self.z0 = z
        self.n_pol = int(np.prod(self.shape))

    def project(self, d: np.ndarray) -> np.ndarray:
        """Remove components that would break row sums (policy kinds)."""
        d = d.copy()
        if self.kind != "search":
            P = d[: self.n_pol].reshape(self.shape)
            P -= P.mean(axis=2, keepdims=True)
            d[: self.n_pol] = P.ravel()
        return d

    def max_step(self, z: np.ndarray, d: np.ndarray) -> float:
        lo = np.zeros_like(z)
        hi = np.full_like(z, np.inf)
        if self.kind == "search":
            diag = np.zeros(self.shape, dtype=bool)
            diag[:, np.arange(self.shape[1]), np.arange(self.shape[1])] = True
            lo[diag.ravel()] = 1.0
        else:
            hi[: self.n_pol] = 1.0
            lo[self.n_pol:] = 1.0
        t = np.inf
        pos, neg = d > 1e-15, d < -1e-15
        if np.any(pos):
            t = min(t, float(np.min((hi[pos] - z[pos]) / d[pos])))
        if np.any(neg):
            t = min(t, float(np.min((lo[neg] - z[neg]) / d[neg])))
        # stopping times and search counts are unbounded above
        t = min(t, 2.0 * float(np.linalg.norm(z)) + 1.0)
        return max(t, 0.0)

    def build(self, z: np.ndarray):
        if self.kind == "search":
            G = z.reshape(self.shape).copy()
            G = np.maximum(G, 0.0)
            idx = np.arange(self.shape[1])
            G[:, idx, idx] = np.maximum(G[:, idx, idx], 1.0)
            return self.ds.replace(search_policies=G)
        P = np.clip(z[: self.n_pol].reshape(self.shape), 0.0, 1.0)
        P = P / P.sum(axis=2, keepdims=True)
        if self.kind == "sht":
            C = np.maximum(z[self.n_pol:], 1.0)
            return self.ds.replace(policies=P, mean_stopping_times=C, tau_max=None)
        return self.ds.replace(policies=P)

    def feasible(self, z: np.ndarray) -> bool:
        return _feasible(self.build(z))


# ------------------------------------------------------------------- eps2

def _boundary_distance(space: _Space, z0, d, scan: int, bisect: int) -> float:
    tmax = space.max_step(z0, d)
    if tmax <= 0:
        return math.inf
    ts = tmax * 2.0 ** -np.arange(scan - 1, -1, -1, dtype=float)
    lo = 0.0
    for t in ts:
        if not space.feasible(z0 + t * d):
            hi = t
            break
        lo = t
    else:
        return math.inf
    for _ in range(bisect):
        mid = 0.5 * (lo + hi)
        if space.feasible(z0 + mid * d):
            lo = mid
        else:
            hi = mid
    return hi


def min_perturbation_infeasible(dataset, directions: int = 32, refine: int = 24, seed: int = 0,
                                scan: int = 12, bisect: int = 24) -> float:
    """Estimate of eps2, the squared distance to the nearest failing dataset.

    Zero when the dataset already fails. Otherwise the boundary is located by
    bisection along random and coordinate directions, then the best direction
    is refined by random local moves. The result never underestimates the
    distance reached along the directions tried, so it is an upper estimate of
    the true minimum.
    """
    space = _Space(dataset)
    z0 = space.z0
    if not space.feasible(z0):
        return 0.0
    rng = np.random.default_rng(seed)
    n = z0.size
    cands = [rng.standard_normal(n) for _ in range(directions)]
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        cands += [e, -e]
    best, best_d = math.inf, None
    for d in cands:
        d = space.project(d)
        norm = np.linalg.norm(d)
        if norm < 1e-12:
            continue
        d = d / norm
        t = _boundary_distance(space, z0, d, scan, bisect)
        if t < best:
            best, best_d = t, d
    if best_d is not None:
        sigma = 0.5
        for _ in range(refine):
            d = space.project(best_d + sigma * rng.standard_normal(n))
            d /= max(np.linalg.norm(d), 1e-12)
            t = _boundary_distance(space, z0, d, scan, bisect)
            if t < best:
                best, best_d = t, d
            else:
                sigma *= 0.8
    return best**2 if math.isfinite(best) else math.inf


# ------------------------------------------------------------------- eps1

class _Projector:
    """Nearest dataset rationalised by fixed costs: a parametric QP.

    Costs enter as parameters, so the problem is compiled once and re-solved
    cheaply for every alternating step.
    """

    def __init__(self, dataset):
        self.ds = dataset
        self.kind = _kind_of(dataset)
        pi0 = dataset.prior.probs
        M = dataset.n_envs
        cons = []
        if self.kind == "search":
            G = dataset.search_policies
            M, X, _ = G.shape
            self.W = [cp.Parameter((X, X)) for _ in range(M)]
            self.q = [cp.Variable((X, X), nonneg=True) for _ in range(M)]
            for m in range(M):
                cons.append(cp.diag(self.q[m]) >= 1.0)
                for n in range(M):
                    if n != m:
                        cons.append(cp.sum(cp.multiply(self.q[m] - self.q[n], self.W[m]))
                                    <= -DEFAULT_STRICT_MARGIN - _INTERIOR)
            obj = sum(cp.sum_squares(self.q[m] - G[m]) for m in range(M))
        else:
            P = dataset.policies
            M, X, A = P.shape
            self.W = [cp.Parameter((X, A)) for _ in range(M)]
            self.q = [cp.Variable((X, A), nonneg=True) for _ in range(M)]
            for m in range(M):
                cons.append(cp.sum(self.q[m], axis=1) == 1.0)
                for a in range(A):
                    for b in range(A):
                        if b != a:
                            cons.append(cp.sum(cp.multiply(self.q[m][:, a], self.W[m][:, a] - self.W[m][:, b]))
                                        <= -_INTERIOR)
            obj = sum(cp.sum_squares(self.q[m] - P[m]) for m in range(M))
            if self.kind == "sht":
                self.C = cp.Variable(M)
                cons.append(self.C >= 1.0)
                for m in range(M):
                    for n in range(M):
                        if n != m:
                            cons.append(cp.sum(cp.multiply(self.q[m] - self.q[n], self.W[m]))
                                        <= self.C[n] - self.C[m] - _INTERIOR)
                obj = obj + cp.sum_squares(self.C - dataset.mean_stopping_times)
            else:
                C = cp.Variable(M)
                for m in range(M):
                    own = cp.sum(cp.multiply(self.q[m], self.W[m]))
                    for n in range(M):
                        if n == m:
                            continue
                        u = cp.Variable(A)
                        for b in range(A):
                            cons.append(u <= self.q[n].T @ self.W[m][:, b])
                        cons.append(own + C[m] - cp.sum(u) - C[n] <= -_INTERIOR)
        self.pi0 = pi0
        self.problem = cp.Problem(cp.Minimize(obj), cons)

    def __call__(self, costs):
        for m, W in enumerate(self.W):
            if self.kind == "search":
                W.value = np.outer(self.pi0, costs[m])
            else:
                W.value = self.pi0[:, None] * costs[m]
        try:
            self.problem.solve(solver=cp.CLARABEL)
        except cp.SolverError:
            return None
        if self.problem.status not in ("optimal", "optimal_inaccurate"):
            return None
        q = np.stack([np.maximum(v.value, 0.0) for v in self.q])
        if self.kind != "search":
            q = q / q.sum(axis=2, keepdims=True)
        C = np.maximum(self.C.value, 1.0) if self.kind == "sht" else None
        return q, C


def _distance(dataset, q, C) -> float:
    if _kind_of(dataset) == "search":
        return float(np.sum((q - dataset.search_policies) ** 2))
    d = float(np.sum((q - dataset.policies) ** 2))
    if C is not None:
        d += float(np.sum((C - dataset.mean_stopping_times) ** 2))
    return d


def _cost_vars(lp: LinearProgram, dataset):
    """Cost variables with the kind's sign, floor and normalisation conventions."""
    kind = _kind_of(dataset)
    M = dataset.n_envs
    if kind == "search":
        X = dataset.n_states
        lower = np.full(X, COST_FLOOR)
        upper = np.full(X, np.inf)
        lower[0] = upper[0] = 1.0
        return np.stack([lp.add_vars(X, lower, upper) for _ in range(M)])
    X, A = dataset.n_states, dataset.n_actions
    diag = np.zeros((X, A), dtype=bool)
    if X == A:
        diag[np.arange(X), np.arange(X)] = True
    lower = np.where(diag, 0.0, POSITIVITY_FLOOR if kind == "sht" else 0.0)
    upper = np.where(diag, 0.0, np.inf)
    s = np.stack([lp.add_vars(X * A, lower.ravel(), upper.ravel()).reshape(X, A) for _ in range(M)])
    if kind == "stopping":
        for m in range(M):
            lp.add_le(s[m][~diag], -1.0, -1.0)
    return s


def _slack(lp, with_slack: bool):
    return lp.add_vars(1, 0.0, None, 1.0) if with_slack else np.array([], dtype=np.int64)


def _row(lp, cols, vals, rhs, slack):
    lp.add_le(np.concatenate([cols, slack]), np.concatenate([vals, -np.ones(slack.size)]), rhs)


def _add_system(lp, dataset, s, policies, C_hat, with_slack: bool):
    """Rows of the kind's test for the given policies; slack rows when ``with_slack``."""
    kind = _kind_of(dataset)
    pi0 = dataset.prior.probs
    M = dataset.n_envs
    if kind == "search":
        for m in range(M):
            for n in range(M):
                if n != m:
                    coef = pi0 @ (policies[m] - policies[n])
                    _row(lp, s[m], coef, -DEFAULT_STRICT_MARGIN, _slack(lp, with_slack))
        return
    joint = pi0[None, :, None] * policies
    p_act = joint.sum(axis=1)
    A = policies.shape[2]
    for m in range(M):
        for a in range(A):
            if p_act[m, a] <= 1e-12:
                continue
            post = joint[m][:, a] / p_act[m, a]
            for b in range(A):
                if b != a:
                    _row(lp, np.concatenate([s[m][:, a], s[m][:, b]]), np.concatenate([post, -post]), 0.0,
                         _slack(lp, with_slack))
    if kind == "sht":
        for m in range(M):
            for n in range(M):
                if n != m:
                    coef = pi0[:, None] * (policies[m] - policies[n])
                    _row(lp, s[m].ravel(), coef.ravel(), C_hat[n] - C_hat[m], _slack(lp, with_slack))
        return
    C = lp.add_vars(M, 0.0)
    u = {}
    for n in range(M):
        acts = np.flatnonzero(p_act[n] > 1e-12)
        for m in range(M):
            if n == m:
                continue
            uu = lp.add_vars(acts.size, lower=-np.inf)
            for ui, a in zip(uu, acts):
                for b in range(A):
                    lp.add_le(np.concatenate([[ui], s[m][:, b]]), np.concatenate([[1.0], -joint[n][:, a]]), 0.0)
            u[(n, m)] = uu
    for m in range(M):
        for n in range(M):
            if n != m:
                cols = np.concatenate([s[m].ravel(), u[(n, m)], [C[m], C[n]]])
                vals = np.concatenate([joint[m].ravel(), -np.ones(u[(n, m)].size), [1.0, -1.0]])
                _row(lp, cols, vals, 0.0, _slack(lp, with_slack))


def _policies(dataset):
    return dataset.search_policies if _kind_of(dataset) == "search" else dataset.policies


def _least_violation_costs(dataset, q=None, C=None):
    """Costs minimising the total violation at the data, optionally exact for (q, C)."""
    lp = LinearProgram()
    s = _cost_vars(lp, dataset)
    C_hat = getattr(dataset, "mean_stopping_times", None)
    _add_system(lp, dataset, s, _policies(dataset), C_hat, with_slack=True)
    if q is not None:
        _add_system(lp, dataset, s, q, C, with_slack=False)
    res = lp.solve()
    if res.status != 0:
        return None
    return [res.x[s[m]] for m in range(dataset.n_envs)]


class _Bilinear:
    """Rows ``const + sum lin + sum coef * x_i * x_j <= 0`` with dense Jacobians."""

    def __init__(self):
        self.n = 0
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.rows = 0
        self.const: list[float] = []
        self.lin = ([], [], [])
        self.bi = ([], [], [], [])

    def add_vars(self, count, lower=0.0, upper=np.inf) -> np.ndarray:
        idx = np.arange(self.n, self.n + count)
        self.n += count
        self.lower.extend(np.broadcast_to(np.asarray(lower, dtype=float), (count,)).tolist())
        self.upper.extend(np.broadcast_to(np.asarray(upper, dtype=float), (count,)).tolist())
        return idx

    def add_row(self, const=0.0, lin=None, bi=None):
        r = self.rows
        self.rows += 1
        self.const.append(float(const))
        if lin is not None:
            cols, vals = lin
            cols = np.asarray(cols).ravel()
            self.lin[0].extend([r] * cols.size)
            self.lin[1].extend(cols.tolist())
            self.lin[2].extend(np.broadcast_to(np.asarray(vals, dtype=float), cols.shape).ravel().tolist())
        if bi is not None:
            i, j, vals = bi
            i, j = np.asarray(i).ravel(), np.asarray(j).ravel()
            self.bi[0].extend([r] * i.size)
            self.bi[1].extend(i.tolist())
            self.bi[2].extend(j.tolist())
            self.bi[3].extend(np.broadcast_to(np.asarray(vals, dtype=float), i.shape).ravel().tolist())

    def freeze(self):
        self.c = np.array(self.const)
        self.lr, self.lc, self.lv = (np.array(a) for a in self.lin)
        self.br, self.bi_, self.bj, self.bv = (np.array(a) for a in self.bi)
        self.lr = self.lr.astype(np.int64)
        self.lc = self.lc.astype(np.int64)
        self.br = self.br.astype(np.int64)
        self.bi_ = self.bi_.astype(np.int64)
        self.bj = self.bj.astype(np.int64)

    def value(self, x):
        v = self.c.copy()
        if self.lr.size:
            v += np.bincount(self.lr, self.lv * x[self.lc], minlength=self.rows)
        if self.br.size:
            v += np.bincount(self.br, self.bv * x[self.bi_] * x[self.bj], minlength=self.rows)
        return v

    def jac(self, x):
        J = np.zeros((self.rows, self.n))
        np.add.at(J, (self.lr, self.lc), self.lv)
        np.add.at(J, (self.br, self.bi_), self.bv * x[self.bj])
        np.add.at(J, (self.br, self.bj), self.bv * x[self.bi_])
        return J


class _JointProblem:
    """Policies and costs together: min distance to the data s.t. the kind's test holds."""

    def __init__(self, dataset):
        self.ds = dataset
        kind = self.kind = _kind_of(dataset)
        pi0 = dataset.prior.probs
        data = _policies(dataset).astype(float)
        M, X, A = data.shape
        B = self.B = _Bilinear()
        if kind == "search":
            lo = np.zeros((X, A))
            lo[np.arange(X), np.arange(X)] = 1.0
            self.q = np.stack([B.add_vars(X * A, lo.ravel()).reshape(X, A) for _ in range(M)])
            lo_s = np.full(X, COST_FLOOR)
            hi_s = np.full(X, np.inf)
            lo_s[0] = hi_s[0] = 1.0
            self.s = np.stack([B.add_vars(X, lo_s, hi_s) for _ in range(M)])
            for m in range(M):
                for n in range(M):
                    if n != m:
                        # sum_{x,a} pi0(x) (q_m - q_n)(x, a) l_m(a) + margin <= 0
                        w = np.broadcast_to(pi0[:, None], (X, A))
                        i = np.concatenate([self.q[m].ravel(), self.q[n].ravel()])
                        j = np.concatenate([np.broadcast_to(self.s[m], (X, A)).ravel()] * 2)
                        B.add_row(DEFAULT_STRICT_MARGIN + _INTERIOR, bi=(i, j, np.concatenate([w.ravel(), -w.ravel()])))
            self.C = None
        else:
            self.q = np.stack([B.add_vars(X * A, 0.0, 1.0).reshape(X, A) for _ in range(M)])
            self.C = B.add_vars(M, 1.0) if kind == "sht" else None
            diag = np.zeros((X, A), dtype=bool)
            if X == A:
                diag[np.arange(X), np.arange(X)] = True
            lo_s = np.where(diag, 0.0, POSITIVITY_FLOOR if kind == "sht" else 0.0)
            hi_s = np.where(diag, 0.0, np.inf)
            self.s = np.stack([B.add_vars(X * A, lo_s.ravel(), hi_s.ravel()).reshape(X, A) for _ in range(M)])
            for m in range(M):
                for a in range(A):
                    for b in range(A):
                        if b != a:
                            i = np.concatenate([self.q[m][:, a], self.q[m][:, a]])
                            j = np.concatenate([self.s[m][:, a], self.s[m][:, b]])
                            B.add_row(_INTERIOR, bi=(i, j, np.concatenate([pi0, -pi0])))
            if kind == "sht":
                for m in range(M):
                    for n in range(M):
                        if n != m:
                            w = np.broadcast_to(pi0[:, None], (X, A)).ravel()
                            i = np.concatenate([self.q[m].ravel(), self.q[n].ravel()])
                            j = np.concatenate([self.s[m].ravel()] * 2)
                            B.add_row(_INTERIOR, lin=([self.C[m], self.C[n]], [1.0, -1.0]),
                                      bi=(i, j, np.concatenate([w, -w])))
            else:
                for m in range(M):
                    B.add_row(1.0, lin=(self.s[m][~diag], -1.0))
                P = B.add_vars(M, 0.0)
                self.u = {}
                for n in range(M):
                    for m in range(M):
                        if n == m:
                            continue
                        u = B.add_vars(A, -np.inf)
                        self.u[(n, m)] = u
                        for a in range(A):
                            for b in range(A):
                                B.add_row(0.0, lin=([u[a]], [1.0]), bi=(self.q[n][:, a], self.s[m][:, b], -pi0))
                for m in range(M):
                    for n in range(M):
                        if n != m:
                            w = np.broadcast_to(pi0[:, None], (X, A)).ravel()
                            B.add_row(_INTERIOR, lin=(np.concatenate([self.u[(n, m)], [P[m], P[n]]]),
                                                      np.concatenate([-np.ones(A), [1.0, -1.0]])),
                                      bi=(self.q[m].ravel(), self.s[m].ravel(), w))
                self.P = P
        B.freeze()
        self.data = data
        self.M, self.X, self.A = M, X, A

    def objective(self, x):
        d = x[self.q] - self.data
        val = float(np.sum(d * d))
        grad = np.zeros_like(x)
        grad[self.q] = 2 * d
        if self.C is not None:
            e = x[self.C] - self.ds.mean_stopping_times
            val += float(np.sum(e * e))
            grad[self.C] = 2 * e
        return val, grad

    def start(self, costs, q=None, C=None) -> np.ndarray:
        x = np.zeros(self.B.n)
        x[self.q] = self.data if q is None else q
        for m in range(self.M):
            x[self.s[m]] = costs[m]
        if self.C is not None:
            x[self.C] = self.ds.mean_stopping_times if C is None else C
        if self.kind == "stopping":
            pi0 = self.ds.prior.probs
            for (n, m), u in self.u.items():
                joint = pi0[:, None] * x[self.q[n]]
                x[u] = (joint.T @ x[self.s[m]]).min(axis=1)
        lo, hi = np.array(self.B.lower), np.array(self.B.upper)
        return np.clip(x, lo, hi)

    def solve(self, x0, maxiter: int = 300):
        cons = [{"type": "ineq", "fun": lambda x: -self.B.value(x), "jac": lambda x: -self.B.jac(x)}]
        if self.kind != "search":
            rows = np.stack([self.q[m][x] for m in range(self.M) for x in range(self.X)])
            E = np.zeros((rows.shape[0], self.B.n))
            E[np.arange(rows.shape[0])[:, None], rows] = 1.0
            cons.append({"type": "eq", "fun": lambda x: E @ x - 1.0, "jac": lambda x: E})
        bounds = [(lo, None if np.isinf(hi) else hi) for lo, hi in zip(self.B.lower, self.B.upper)]
        bounds = [(None if np.isinf(lo) else lo, hi) for lo, hi in bounds]
        res = minimize(self.objective, x0, jac=True, method="SLSQP", bounds=bounds, constraints=cons,
                       options={"maxiter": maxiter, "ftol": 1e-12})
        return [res.x[self.s[m]] for m in range(self.M)]


JOINT_VARIABLE_CAP = 400


def min_perturbation_feasible(dataset, restarts: int = 16, max_iter: int = 30, seed: int = 0,
                              tol: float = 1e-10, local: bool | None = None) -> float:
    """Estimate of eps1, the squared distance to the nearest passing dataset.

    Zero when the dataset already passes. Otherwise alternating minimisation:
    with costs fixed the nearest rationalised dataset is a convex QP; with
    that dataset fixed, the costs are re-chosen among its witnesses to
    minimise violation at the original data. The first start uses the
    least-violation costs; the others alternate between multiplicative
    perturbations of them and broad log-normal draws. On small problems
    (``local`` defaults to at most ``JOINT_VARIABLE_CAP`` variables) every
    start is also polished by a joint local solve over policies and costs,
    and the best costs then seed a Nelder-Mead search over log costs.
    Each candidate is projected by the fixed-cost QP and then re-tested with
    the feasibility LP, so every value returned is attained by a passing
    dataset and the result is an upper estimate.
    """
    if _feasible(dataset):
        return 0.0
    rng = np.random.default_rng(seed)
    project = _Projector(dataset)
    base = _least_violation_costs(dataset)
    if base is None:
        return math.inf
    joint = None
    if local is None or local:
        joint = _JointProblem(dataset)
        if local is None and joint.B.n > JOINT_VARIABLE_CAP:
            joint = None
    best, best_costs, last = math.inf, None, None

    def certify(costs):
        nonlocal best, best_costs, last
        last = project(costs)
        # the QP can report success on inaccurate solves; re-test the candidate
        if last is None or not _passes(dataset, *last):
            return math.inf
        dist = _distance(dataset, *last)
        if dist < best:
            best, best_costs = dist, costs
        return dist

    for r in range(restarts):
        if r == 0:
            costs = base
        elif r % 2:
            costs = _renormalise(dataset, [c * np.exp(0.5 * rng.standard_normal(c.shape)) for c in base])
        else:
            # broad draws reach basins the local perturbations miss
            costs = _renormalise(dataset, [np.exp(1.5 * rng.standard_normal(c.shape)) for c in base])
        prev = math.inf
        for _ in range(max_iter):
            dist = certify(costs)
            if not math.isfinite(dist) or prev - dist <= tol * max(1.0, prev):
                break
            prev = dist
            new = _least_violation_costs(dataset, *last)
            if new is None:
                break
            costs = new
        if joint is not None:
            certify(_renormalise(dataset, joint.solve(joint.start(costs))))
    if joint is not None and best_costs is not None:
        _log_cost_search(dataset, best_costs, certify)
    return best


def _free_masks(dataset, costs):
    kind = _kind_of(dataset)
    out = []
    for c in costs:
        mask = np.ones(np.shape(c), dtype=bool)
        if kind == "search":
            mask[0] = False  # l(0) = 1
        elif mask.ndim == 2 and mask.shape[0] == mask.shape[1]:
            mask[np.arange(mask.shape[0]), np.arange(mask.shape[0])] = False
        out.append(mask)
    return out


def _log_cost_search(dataset, costs, objective, step: float = 0.5, evals_per_dim: int = 40):
    """Nelder-Mead on the log of the free cost entries; ``objective`` records its own best."""
    masks = _free_masks(dataset, costs)
    template = [np.array(c, dtype=float) for c in costs]
    x0 = np.concatenate([np.log(np.maximum(c[k], POSITIVITY_FLOOR)) for c, k in zip(template, masks)])
    if x0.size == 0:
        return

    def unpack(x):
        out, i = [], 0
        for c, k in zip(template, masks):
            c = c.copy()
            c[k] = np.exp(x[i:i + k.sum()])
            i += k.sum()
            out.append(c)
        return _renormalise(dataset, out)

    def f(x):
        d = objective(unpack(x))
        return d if math.isfinite(d) else 1e6

    simplex = np.vstack([x0, x0 + step * np.eye(x0.size)])
    minimize(f, x0, method="Nelder-Mead",
             options={"initial_simplex": simplex, "maxfev": evals_per_dim * x0.size, "xatol": 1e-6, "fatol": 1e-14})


def _passes(dataset, q, C) -> bool:
    kind = _kind_of(dataset)
    try:
        if kind == "search":
            cand = dataset.replace(search_policies=q)
        elif kind == "sht":
            cand = dataset.replace(policies=q, mean_stopping_times=C, tau_max=None)
        else:
            cand = dataset.replace(policies=q)
    except SchemaViolation:
        return False
    return _feasible(cand)


def _renormalise(dataset, costs):
    kind = _kind_of(dataset)
    out = []
    for c in costs:
        c = np.array(c, dtype=float)
        if kind == "search":
            c = np.maximum(c / c[0], COST_FLOOR)
        elif kind == "stopping":
            X, A = c.shape
            mask = np.ones((X, A), dtype=bool)
            if X == A:
                mask[np.arange(X), np.arange(X)] = False
            c = c / max(c[mask].sum(), 1e-12)
        else:
            idx = np.arange(c.shape[0])
            c = np.maximum(c, POSITIVITY_FLOOR)
            c[idx, idx] = 0.0
        out.append(c)
    return out
