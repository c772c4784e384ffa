import functools
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stopirl.config import load_bundled
from stopirl.datasets import aggregate_search, aggregate_sht
from stopirl.search import simulate_search
from stopirl.sht import simulate_sht, solve_sht_policy


@functools.lru_cache(maxsize=None)
def sht_policies():
    env = load_bundled("sht_baseline").environment_set()
    return env, tuple(solve_sht_policy(env, m) for m in range(env.n_envs))


@functools.lru_cache(maxsize=None)
def sht_dataset(trials: int = 100_000, seed: int = 2024):
    env, policies = sht_policies()
    cfg = load_bundled("sht_baseline")
    return aggregate_sht(simulate_sht(env, trials, seed, list(policies)), cfg.prior)


@functools.lru_cache(maxsize=None)
def search_dataset(trials: int = 100_000, seed: int = 2024):
    cfg = load_bundled("search_baseline")
    return aggregate_search(simulate_search(cfg.environment_set(), trials, seed), cfg.prior)


@pytest.fixture(scope="session")
def sht_config():
    return load_bundled("sht_baseline")


@pytest.fixture(scope="session")
def search_config():
    return load_bundled("search_baseline")


@pytest.fixture(scope="session")
def sht_env():
    return sht_policies()


@pytest.fixture(scope="session")
def sht_data():
    return sht_dataset()


@pytest.fixture(scope="session")
def search_data():
    return search_dataset()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
