import numpy as np
import pytest

from stopirl.beliefs import Belief, GaussianObservationModel
from stopirl.errors import HorizonExceeded, InvalidModel
from stopirl.sht import (
    CONTINUE,
    EnvironmentSet,
    TrialRecord,
    run_sht_trial,
    simplex_grid,
    simulate_sht,
    solve_sht_policy,
)


def _env(costs, means=(1.0, -1.0), variances=(2.0, 2.0)):
    return EnvironmentSet(Belief([0.5, 0.5]), GaussianObservationModel(means, variances), costs)


def test_symmetric_costs_give_symmetric_thresholds():
    env = _env([[[0, 3], [3, 0]], [[0, 1], [1, 0]]])
    pol = solve_sht_policy(env, 0)
    assert pol.upper + pol.lower == pytest.approx(1.0, abs=1.0 / (pol.grid_points - 1))


def test_sht_baseline_environment_thresholds(sht_env):
    _, policies = sht_env
    pol = policies[2]
    assert 0.0 < pol.lower < pol.upper < 1.0
    assert not pol.continue_region_empty
    assert pol.stop_region_connected()
    # with a unit continue cost the two cheaper environments never continue
    assert policies[0].continue_region_empty and policies[1].continue_region_empty


def test_zero_costs_stop_immediately():
    env = _env([[[0, 0], [0, 0]], [[0, 1], [1, 0]]])
    pol = solve_sht_policy(env, 0)
    assert pol.continue_region_empty
    rec = run_sht_trial(pol, env, 0, seed=3)
    # all stop actions tie; the lowest index wins
    assert rec.tau == 1 and rec.action == 0


def test_continuation_value_matches_monte_carlo(sht_env):
    """c + E[V(next belief)] at the prior equals the simulated mean cost."""
    env, policies = sht_env
    for m in (0, 2):
        tr = simulate_sht(env, 20_000, 77, policies)
        sel = tr.env == m
        s = env.stop_costs[m]
        cost = s[tr.state[sel], tr.action[sel]] + env.continue_cost * tr.tau[sel]
        se = cost.std() / np.sqrt(cost.size)
        w = float(policies[m].continuation_at(np.array([[0.5, 0.5]]))[0])
        assert abs(cost.mean() - w) < 4 * se + 2e-3


def test_value_function_is_concave(sht_env):
    _, policies = sht_env
    V = policies[2].values
    # linear interpolation of the continuation leaves kinks of order grid^2
    assert np.all(np.diff(V, 2) <= 1e-5)


def test_mean_tau_finite_and_above_one(sht_env):
    env, policies = sht_env
    taus = [run_sht_trial(policies[2], env, 2, seed=s).tau for s in range(400)]
    assert 1.0 < np.mean(taus) < 50.0


def test_trial_determinism(sht_env):
    env, policies = sht_env
    assert run_sht_trial(policies[1], env, 1, seed=9) == run_sht_trial(policies[1], env, 1, seed=9)


def test_trial_rejects_foreign_policy(sht_env):
    env, policies = sht_env
    with pytest.raises(InvalidModel):
        run_sht_trial(policies[0], env, 1, seed=0)


def test_horizon_cap(sht_env):
    env, policies = sht_env
    raised = 0
    for seed in range(40):
        try:
            run_sht_trial(policies[2], env, 2, seed=seed, max_steps=1)
        except HorizonExceeded:
            raised += 1
    assert raised > 0


def test_record_counts(sht_env):
    env, policies = sht_env
    tr = simulate_sht(env, 1, 0, policies)
    assert len(tr) == env.n_envs * env.n_states
    assert isinstance(tr[0], TrialRecord)
    small = EnvironmentSet(Belief([0.5, 0.5]), GaussianObservationModel([1, -1], [2, 2]),
                           [[[0, 2], [2.5, 0]], [[0, 4], [3, 0]]])
    assert len(simulate_sht(small, 1, 0)) == 4


def test_simulation_is_deterministic(sht_env):
    env, policies = sht_env
    a = simulate_sht(env, 500, 11, policies)
    b = simulate_sht(env, 500, 11, policies)
    for col in ("env", "state", "action", "tau"):
        assert getattr(a, col).tobytes() == getattr(b, col).tobytes()
    c = simulate_sht(env, 500, 12, policies)
    assert c.tau.tobytes() != a.tau.tobytes()


def test_three_state_policy_decides():
    env = EnvironmentSet(
        Belief([1 / 3] * 3), GaussianObservationModel([-2, 0, 2], [8, 8, 8]),
        [[[0, 5, 6], [5, 0, 7], [6, 7, 0]], [[0, 4, 4], [4, 0, 4], [4, 4, 0]]],
    )
    pol = solve_sht_policy(env, 0, grid_points=20)
    assert pol.decide([1.0, 0.0, 0.0])[0] == 0
    assert pol.decide([0.0, 0.0, 1.0])[0] == 2
    assert pol.decide([1 / 3, 1 / 3, 1 / 3])[0] in (CONTINUE, 0, 1, 2)
    assert simplex_grid(3, 20).shape == (231, 3)
