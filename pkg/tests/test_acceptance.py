"""End-to-end acceptance checks.

Each test prints one ``PASS``/``FAIL`` line with the measured numbers and then
asserts. Run on its own with ``pytest tests/test_acceptance.py -v`` or
``python3 tests/test_acceptance.py``.
"""

import math
import sys
import time

import numpy as np
import pytest

from oracles import (
    F9_ALPHA,
    F9_COSTS,
    grid_eps_stopping,
    oracle_search_counts,
    policies_from_ab,
    sht_feasible_grid,
    stopping_feasible_grid,
)
from stopirl.beliefs import Belief, SearchObservationModel
from stopirl.config import load_bundled
from stopirl.datasets import SHTDataset, SearchDataset, StoppingDataset, aggregate_search, aggregate_sht
from stopirl.finite_sample import irl_detector, search_error_bounds, sht_error_bounds, stopping_error_bounds
from stopirl.irl_search import check_feasibility_search, search_residuals
from stopirl.irl_sht import (
    check_feasibility_sht,
    normalized_error,
    regularized_point_estimate,
    sht_costs_feasible,
    sht_residuals,
)
from stopirl.irl_stopping import check_feasibility_stopping
from stopirl.search import SearchEnvironmentSet, is_periodic, simulate_search
from stopirl.sht import simulate_sht, solve_sht_policy

TOL = 0.02


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, detail

    return emit


def _sht_run(cfg, trials, seed):
    env = cfg.environment_set()
    policies = [solve_sht_policy(env, m) for m in range(env.n_envs)]
    return aggregate_sht(simulate_sht(env, trials, seed, policies), cfg.prior, n_envs=env.n_envs)


# ------------------------------------------------------- end-to-end replicas

def test_sht_baseline_consistency(report):
    cfg = load_bundled("sht_baseline")
    passed, worst, slowest = 0, -math.inf, 0.0
    for k in range(10):
        t0 = time.perf_counter()
        ds = _sht_run(cfg, 100_000, cfg.base_seed + k)
        res = check_feasibility_sht(ds)
        resid = max(sht_residuals(ds, cfg.costs).values())
        slowest = max(slowest, time.perf_counter() - t0)
        worst = max(worst, resid)
        passed += res.feasible and resid <= TOL
    ok = passed >= 9 and slowest <= 120
    report("sht consistency", ok, f"{passed}/10 seeds feasible with true-cost residual <= {TOL}; "
                                   f"worst residual {worst:.4f}; slowest seed {slowest:.1f}s")


def test_search_baseline_consistency(report):
    cfg = load_bundled("search_baseline")
    margin = cfg.solver["strict_margin"]
    env = cfg.environment_set()
    passed, worst, slowest = 0, -math.inf, 0.0
    for k in range(10):
        t0 = time.perf_counter()
        ds = aggregate_search(simulate_search(env, 100_000, cfg.base_seed + k), cfg.prior)
        res = check_feasibility_search(ds, strict_margin=margin)
        # J(g_m, l_m) - J(g_n, l_m) for the true costs
        resid = max(search_residuals(ds, cfg.costs, strict_margin=0.0).values())
        slowest = max(slowest, time.perf_counter() - t0)
        worst = max(worst, resid)
        passed += res.feasible and resid <= -margin + TOL
    ok = passed >= 9 and slowest <= 120
    report("search consistency", ok, f"{passed}/10 seeds feasible with true-cost residual <= -margin + {TOL}; "
                                   f"worst residual {worst:.4f}; slowest seed {slowest:.1f}s")


def test_regularized_estimator(report):
    cfg = load_bundled("sht_regularized")
    t0 = time.perf_counter()
    ds = _sht_run(cfg, 100_000, cfg.base_seed)
    lambdas = np.logspace(-2, 2, 17)
    errors = np.array([normalized_error(regularized_point_estimate(ds, lam).costs, cfg.costs) for lam in lambdas])
    top = lambdas >= np.quantile(lambdas, 0.75)
    rising = bool(np.all(np.diff(errors[top]) > 0))
    boxed = regularized_point_estimate(ds, 0.0, box=cfg.solver["box"])
    boxed_ok = bool(sht_costs_feasible(ds, boxed.costs))
    elapsed = time.perf_counter() - t0
    ok = errors.min() <= 0.30 and rising and boxed_ok and elapsed <= 600
    report("regularized estimator", ok,
           f"M={ds.n_envs} X={ds.n_states}: min normalized error {errors.min():.4f} (target <= 0.30) "
           f"at lambda={lambdas[errors.argmin()]:.3g}; top-quartile rising={rising}; "
           f"box-constrained lambda=0 estimate feasible={boxed_ok}; {elapsed:.0f}s")


# ------------------------------------------------------------------- oracles

def _decided(verdict_at):
    """Oracle verdict, or None when one grid step of slack flips it."""
    lo, hi = verdict_at(-TOL), verdict_at(TOL)
    return lo if lo == hi else None


def test_oracle_equivalence(report):
    rng = np.random.default_rng(2026)
    results = {}
    for kind in ("stopping", "sht"):
        agree = checked = excluded = feasible = 0
        while checked < 100:
            pi0 = np.array([w := rng.uniform(0.2, 0.8), 1 - w])
            a, b = rng.uniform(0.05, 0.95, 2), rng.uniform(0.05, 0.95, 2)
            p = policies_from_ab(a, b)
            if kind == "stopping":
                truth = _decided(lambda s: stopping_feasible_grid(pi0, a, b, step=0.02, slack=s))
                ds = StoppingDataset(pi0, p, np.full((2, 2), 100))
                run = lambda: check_feasibility_stopping(ds, "potentials", check_degenerate=False).feasible
            else:
                C = 1 + rng.uniform(0, 0.5, 2)
                truth = _decided(lambda s: sht_feasible_grid(pi0, a, b, C, step=0.02, slack=s))
                ds = SHTDataset(pi0, p, np.full((2, 2), 100), C)
                run = lambda: check_feasibility_sht(ds, check_degenerate=False).feasible
            if truth is None:
                excluded += 1
                continue
            checked += 1
            feasible += truth
            agree += run() == truth
        results[kind] = (agree, excluded, feasible)
    ok = all(r[0] == 100 for r in results.values())
    report("oracle equivalence", ok, "; ".join(
        f"{k}: {r[0]}/100 agree ({r[2]} feasible, {r[1]} near-boundary excluded)" for k, r in results.items()))


def _bayes_policy(rng, X, A, Y):
    """Policy of an agent acting optimally on a random private signal with random costs."""
    prior = np.full(X, 1.0 / X)
    lik = rng.dirichlet(np.ones(Y), size=X)
    s = rng.uniform(0.5, 3.0, (X, A))
    if X == A:
        np.fill_diagonal(s, 0.0)
    choice = np.argmin((prior[:, None] * lik).T @ s, axis=1)
    p = np.zeros((X, A))
    for y in range(Y):
        p[:, choice[y]] += lik[:, y]
    p = np.clip(p, 0.0, 1.0)
    return p / p.sum(axis=1, keepdims=True)


def test_mode_equivalence(report):
    rng = np.random.default_rng(31)
    agree = feasible = 0
    for k in range(100):
        M = 2 + (k // 2) % 4  # every M meets both instance types
        if k % 2:
            p = rng.dirichlet(np.ones(2), size=(M, 2))
        else:
            p = np.stack([_bayes_policy(rng, 2, 2, 3) for _ in range(M)])
        ds = StoppingDataset([0.5, 0.5], p, np.full((M, 2), 100))
        a = check_feasibility_stopping(ds, "potentials", check_degenerate=False).feasible
        b = check_feasibility_stopping(ds, "cycles", check_degenerate=False).feasible
        agree += a == b
        feasible += a
    report("mode equivalence", agree == 100, f"{agree}/100 agree over M in 2..5 ({feasible} feasible)")


def test_suboptimality_rejection(report):
    cfg = load_bundled("sht_baseline")
    rejected = 0
    for seed in range(50):
        ds = _sht_run(cfg, 20_000, seed)
        rng = np.random.default_rng(seed)
        perm = [1, 2, 0] if rng.random() < 0.5 else [2, 0, 1]  # the two derangements of three
        shuffled = ds.replace(policies=ds.policies[perm])
        rejected += irl_detector(shuffled, bounds=False).hypothesis == "H1"
    report("suboptimality rejection", rejected >= 45, f"{rejected}/50 shuffled datasets declared H1 (need >= 45)")


# -------------------------------------------------------------------- bounds

def _stopping_scalar(K, X, eps):
    flat = [k for row in K for k in row]
    tilde = sum(1.0 / k for k in flat)
    log_prod = sum((1.0 / k) / tilde * math.log(2 * k / X) for k in flat)
    g = X * tilde * math.exp(log_prod)
    return g * math.exp(-eps / tilde)


def _sht_scalar(K, X, tau, eps):
    g = sum(X / k for row in K for k in row) + sum(tau**2 / sum(row) for row in K)
    log_h = 0.0
    for row in K:
        Km = sum(row)
        log_h += (tau**2 / Km) * math.log(2 * Km / tau**2)
        log_h += sum((X / k) * math.log(2 * k / X) for k in row)
    return g * math.exp(log_h / g) * math.exp(-2 * eps / g)


def _search_scalar(K, X, alpha, eps):
    s = sum(k ** -0.5 for row in K for k in row)
    return (1 - alpha) * X / (eps * alpha**2) * s * s


def _rel(a, b):
    return abs(a - b) / abs(b)


def test_bound_formulas(report):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        M, X = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        K = rng.integers(20, 5000, (M, X))
        e1, e2 = rng.uniform(0.001, 0.5, 2)
        tau = int(rng.integers(1, 12))
        alpha = float(rng.uniform(0.05, 0.95))
        p = rng.dirichlet(np.ones(X), size=(M, X))
        prior = [1.0 / X] * X
        Kl = K.tolist()

        st = stopping_error_bounds(StoppingDataset(prior, p, K), e1, e2)
        worst = max(worst, _rel(st.posterior_type1_bound, _stopping_scalar(Kl, X, e1)),
                    _rel(st.posterior_type2_bound, _stopping_scalar(Kl, X, e2)))

        sh = sht_error_bounds(SHTDataset(prior, p, K, np.ones(M), tau), e1, e2)
        worst = max(worst, _rel(sh.posterior_type1_bound, _sht_scalar(Kl, X, tau, e1)),
                    _rel(sh.posterior_type2_bound, _sht_scalar(Kl, X, tau, e2)))

        g = np.stack([np.eye(X) * (1 + m) for m in range(M)])
        se = search_error_bounds(SearchDataset(prior, g, K), alpha, e1, e2)
        worst = max(worst, _rel(se.posterior_type1_bound, _search_scalar(Kl, X, alpha, e1)),
                    _rel(se.posterior_type2_bound, _search_scalar(Kl, X, alpha, e2)))
        for eb in (st, sh, se):
            for post, raw in ((eb.posterior_type2_bound, eb.type1_bound), (eb.posterior_type1_bound, eb.type2_bound)):
                want = post / (1 - post) if post < 1 else math.inf
                worst = max(worst, 0.0 if raw == want else _rel(raw, want))

    ex4 = stopping_error_bounds(StoppingDataset([0.5, 0.5], policies_from_ab([0.9, 0.6], [0.2, 0.3]),
                                                np.full((2, 2), 1000)), 0.01, 0.0).posterior_type1_bound
    ex6 = search_error_bounds(SearchDataset([0.5, 0.5], np.stack([np.eye(2), 2 * np.eye(2)]),
                                            np.full((2, 2), 10_000)), 0.5, 0.1, 0.0).posterior_type1_bound
    ok = worst <= 1e-12 and round(ex4, 3) == 0.657 and _rel(ex6, 0.064) <= 1e-12
    report("bound formulas", ok, f"worst relative error {worst:.2e} over 20 parameter sets; "
                                 f"stopping example {ex4:.6f}; search example {ex6:.12f}")


# --------------------------------------------------------------- calibration

def test_detector_calibration(report):
    cfg = load_bundled("sht_baseline").with_overrides()
    cfg.costs = cfg.costs[[0, 2]]
    env = cfg.environment_set()
    policies = [solve_sht_policy(env, m) for m in range(env.n_envs)]
    pop = aggregate_sht(simulate_sht(env, 2_000_000, 12345, policies), cfg.prior)
    a, b = pop.policies[:, 0, 0], pop.policies[:, 1, 0]
    eps2 = grid_eps_stopping(pop.prior.probs, a, b, want_feasible=False)
    lines, ok = [], True
    for K in (50, 100):
        h1 = 0
        bound = None
        for r in range(500):
            ds = aggregate_sht(simulate_sht(env, K, 10_000 * K + r, policies), cfg.prior)
            res = irl_detector(ds, kind="stopping", eps1=0.0, eps2=eps2)
            h1 += res.hypothesis == "H1"
            bound = res.bounds.type1_bound if bound is None else bound
        rate = h1 / 500
        checked = bound < 1
        ok &= (rate <= bound) if checked else True
        lines.append(f"K={K}: Type-I rate {rate:.3f}, raw bound {bound:.4g}" + ("" if checked else " (vacuous)"))
    report("detector calibration", ok, f"grid-oracle eps2 {eps2:.4f}; " + "; ".join(lines))


# ---------------------------------------------------------------- search F9

def test_search_structure(report):
    X = len(F9_COSTS)
    env = SearchEnvironmentSet(Belief([1 / X] * X), SearchObservationModel([F9_ALPHA] * X), F9_COSTS)
    K = 10_000
    tr = simulate_search(env, K, 4242)
    periodic = sum(is_periodic(tr[k].actions, X) for k in range(len(tr)))
    rng = np.random.default_rng(4243)
    alpha = np.full(X, F9_ALPHA)
    inside = total = 0
    for m in range(env.n_envs):
        for x in range(X):
            mine = tr.counts[(tr.env == m) & (tr.state == x)]
            ref = oracle_search_counts(alpha, np.array(F9_COSTS[m]), x, K, rng)
            band = 3 * np.sqrt(mine.var(axis=0) / K + ref.var(axis=0) / K)
            inside += int(np.sum(np.abs(mine.mean(axis=0) - ref.mean(axis=0)) <= band))
            total += X
    ok = periodic == len(tr) and inside == total
    report("search structure", ok, f"{periodic}/{len(tr)} trials period-{X}; "
                                   f"{inside}/{total} entries of g-hat inside 3-sigma bands at K={K}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
