"""Independent brute-force references used by the test suite.

Nothing here calls the LP or QP code in the package: the 2-state,
2-environment checks are written from the inequalities directly and
evaluated exactly or on grids.
"""

from __future__ import annotations

import math

import numpy as np


def _joints(pi0, a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return pi0[0] * a, pi0[0] * (1 - a), pi0[1] * b, pi0[1] * (1 - b)


def nias_interval(pi0, a, b):
    """Range of u = s(0,1) / (s(0,1) + s(1,0)) keeping both actions optimal.

    ``a`` = p(0|0) and ``b`` = p(0|1), broadcast over any leading shape.
    """
    j00, j01, j10, j11 = _joints(pi0, a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        lo = np.where(j00 + j10 > 0, j10 / (j00 + j10), 0.0)
        hi = np.where(j01 + j11 > 0, j11 / (j01 + j11), 1.0)
    return lo, hi


def _switch_gain(pi0, a, b, m, n, u):
    """own cost(m) - surrogate(policy n, costs m) at unit-sum costs (u, 1 - u)."""
    j00, j01, j10, j11 = _joints(pi0, a, b)
    own = j01[..., m] * u + j10[..., m] * (1 - u)
    sur = np.minimum(j10[..., n] * (1 - u), j00[..., n] * u) + np.minimum(j01[..., n] * u, j11[..., n] * (1 - u))
    return own - sur


def stopping_feasible_exact(pi0, a, b) -> np.ndarray:
    """Exact test for 2 states, 2 actions, 2 environments and zero-diagonal costs.

    The two potential inequalities add up to k_1 t_1 + k_2 t_2 <= 0 with free
    positive scales k_m, so some environment must admit t_m(u) <= 0 inside its
    action-switch interval. t_m is piecewise linear with kinks where the
    surrogate minima switch, so endpoints and kinks suffice.
    """
    pi0 = np.asarray(pi0, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lo, hi = nias_interval(pi0, a, b)
    ok = np.all(lo <= hi + 1e-12, axis=-1)
    lo_n, hi_n = nias_interval(pi0, a, b)
    good = []
    for m, n in ((0, 1), (1, 0)):
        top = np.maximum(hi[..., m], lo[..., m])
        cands = [lo[..., m], top, np.clip(lo_n[..., n], lo[..., m], top), np.clip(hi_n[..., n], lo[..., m], top)]
        tmin = np.min(np.stack([_switch_gain(pi0, a, b, m, n, c) for c in cands]), axis=0)
        good.append(tmin <= 1e-12)
    return ok & (good[0] | good[1])


def stopping_feasible_grid(pi0, a, b, step: float = 0.02, slack: float = 0.0) -> bool:
    """Exhaustive grid over normalised costs u in [0, 1] with the given step.

    ``slack`` widens (positive) or narrows (negative) every inequality by that
    much in cost-direction units; used to detect near-boundary instances.
    """
    u = np.arange(0.0, 1.0 + step / 2, step)
    lo, hi = nias_interval(np.asarray(pi0), a, b)
    good = []
    for m, n in ((0, 1), (1, 0)):
        inside = (u >= lo[m] - slack) & (u <= hi[m] + slack)
        t = _switch_gain(np.asarray(pi0), np.asarray(a)[None], np.asarray(b)[None], m, n, u)
        good.append(bool(np.any(inside & (t <= slack))))
    both = all(np.any((u >= lo[m] - slack) & (u <= hi[m] + slack)) for m in range(2))
    return both and (good[0] or good[1])


def sht_feasible_grid(pi0, a, b, C, step: float = 0.02, slack: float = 0.0) -> bool:
    """Grid oracle for the hypothesis-testing test with 2 states and 2 environments.

    Costs are k (u, 1 - u) with u on the grid; the pair inequality for
    environment m is linear in k, so the best k is found in closed form:
    with d = C_n - C_m and slope w(u), some k > 0 works iff d >= 0 or w(u) < 0.
    """
    u = np.arange(step, 1.0, step)  # strictly positive off-diagonal costs
    lo, hi = nias_interval(np.asarray(pi0), a, b)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for m, n in ((0, 1), (1, 0)):
        inside = (u >= lo[m] - slack) & (u <= hi[m] + slack)
        # sum pi0 (p_m - p_n) L_m over off-diagonal entries: L(0,1) = k u, L(1,0) = k (1 - u)
        w = pi0[0] * ((1 - a[m]) - (1 - a[n])) * u + pi0[1] * (b[m] - b[n]) * (1 - u)
        d = C[n] - C[m]
        if not np.any(inside & ((d >= -slack) | (w < slack))):
            return False
    return True


def grid_eps_stopping(pi0, a, b, want_feasible: bool, step: float = 0.05, levels: int = 4) -> float:
    """Multi-resolution grid search for the squared distance to the nearest
    2x2x2 policy set whose exact verdict equals ``want_feasible``.

    Both entries of a policy row move together, so each coordinate change
    counts twice in the squared L2 distance.
    """
    z0 = np.array([a[0], a[1], b[0], b[1]], dtype=float)
    center, half, st = z0, 1.0, step
    best, best_z = math.inf, None
    for _ in range(levels):
        axes = [np.unique(np.clip(np.arange(c - half, c + half + st / 2, st), 0.0, 1.0)) for c in center]
        A0, A1, B0, B1 = np.meshgrid(*axes, indexing="ij")
        f = stopping_feasible_exact(pi0, np.stack([A0, A1], -1), np.stack([B0, B1], -1))
        d = 2 * ((A0 - z0[0]) ** 2 + (A1 - z0[1]) ** 2 + (B0 - z0[2]) ** 2 + (B1 - z0[3]) ** 2)
        d = np.where(f == want_feasible, d, np.inf)
        k = np.unravel_index(np.argmin(d), d.shape)
        if d[k] < best:
            best, best_z = float(d[k]), np.array([A0[k], A1[k], B0[k], B1[k]])
        if best_z is None:
            return best
        center, half, st = best_z, 3 * st, st / 5
    return best


def policies_from_ab(a, b) -> np.ndarray:
    return np.stack([[[a[m], 1 - a[m]], [b[m], 1 - b[m]]] for m in range(len(a))])


# uniform prior, common alpha >= 1 - min l / max l for every environment
F9_ALPHA = 0.7
F9_COSTS = [[1.0, 1.5, 2.0], [2.0, 1.0, 1.2], [1.2, 2.0, 1.0]]


def oracle_search_counts(alpha, costs, state, K, rng):
    """Independent episode loop; returns (K, X) visit counts."""
    X = len(costs)
    out = np.zeros((K, X), dtype=np.int64)
    for k in range(K):
        pi = np.full(X, 1.0 / X)
        while True:
            a = int(np.argmax(pi * alpha / costs))
            out[k, a] += 1
            if a == state and rng.random() < alpha[a]:
                break
            pi[a] *= 1 - alpha[a]
            pi /= pi.sum()
    return out
