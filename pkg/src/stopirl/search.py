"""Bayesian search agents under the index policy.

The agent searches the location maximising pi(a) * alpha(a) / l(a). Until
the target is found the belief evolves deterministically, so every trial of
an environment follows the same action sequence and differs only in when the
target is revealed. ``simulate_search`` exploits this; ``run_search_trial``
plays one trial step by step.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .beliefs import Belief, SearchObservationModel, bayes_update_search, validate_search_costs, validate_simplex
from .errors import HorizonExceeded, InvalidModel
from .sht import stratum_rng

DEFAULT_MAX_STEPS = 1_000_000


@dataclass(frozen=True, eq=False)
class SearchEnvironmentSet:
    """Prior, reveal probabilities and one search-cost vector per environment."""

    prior: Belief
    model: SearchObservationModel
    search_costs: np.ndarray

    def __post_init__(self):
        prior = self.prior if isinstance(self.prior, Belief) else validate_simplex(self.prior)
        object.__setattr__(self, "prior", prior)
        costs = np.array([validate_search_costs(l) for l in self.search_costs])
        if costs.ndim != 2 or costs.shape[0] < 2:
            raise InvalidModel("need at least two environments")
        if costs.shape[1] != len(prior) or self.model.n_actions != len(prior):
            raise InvalidModel("locations, reveal probabilities and costs must have equal length")
        if all(np.array_equal(costs[0], c) for c in costs[1:]):
            raise InvalidModel("at least two environments must have different search costs")
        costs.setflags(write=False)
        object.__setattr__(self, "search_costs", costs)

    @property
    def n_envs(self) -> int:
        return self.search_costs.shape[0]

    @property
    def n_states(self) -> int:
        return self.search_costs.shape[1]


@dataclass(frozen=True)
class SearchTrialRecord:
    """One search episode; the last searched location is the true state."""

    env: int
    state: int
    actions: tuple[int, ...]
    tau: int


def search_index_action(belief, model: SearchObservationModel, costs) -> int:
    """Location with the largest pi(a) * alpha(a) / l(a); ties go to the lowest index."""
    pi = np.asarray(belief, dtype=float)
    index = pi * model.reveal_probs / np.asarray(costs, dtype=float)
    return int(np.argmax(index))


def run_search_trial(
    env: SearchEnvironmentSet,
    env_index: int,
    seed: int,
    state: int | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> SearchTrialRecord:
    """Play one episode: search, draw found/not-found, update on failure.

    The first search happens at t = 0 from the prior.

    Raises:
        HorizonExceeded: if the target is not found within ``max_steps`` searches.
    """
    rng = np.random.default_rng(seed)
    if state is None:
        state = int(rng.choice(env.n_states, p=env.prior.probs))
    belief = env.prior
    costs = env.search_costs[env_index]
    actions = []
    for _ in range(max_steps):
        a = search_index_action(belief, env.model, costs)
        actions.append(a)
        if a == state and rng.random() < env.model.reveal_probs[a]:
            return SearchTrialRecord(env_index, int(state), tuple(actions), len(actions))
        belief = bayes_update_search(belief, a, False, env.model)
    raise HorizonExceeded(f"target not found within {max_steps} searches")


def not_found_sequence(env: SearchEnvironmentSet, env_index: int, length: int) -> np.ndarray:
    """The first ``length`` actions taken while the target stays hidden."""
    alpha = env.model.reveal_probs
    ratio = alpha / env.search_costs[env_index]
    miss = 1.0 - alpha
    pi = np.array(env.prior.probs)
    out = np.empty(length, dtype=np.int64)
    for t in range(length):
        a = int(np.argmax(pi * ratio))
        out[t] = a
        pi[a] *= miss[a]
        total = pi.sum()
        if total <= 0.0:
            # every location has been ruled out; only reachable with alpha = 1
            out[t + 1:] = a
            return out
        pi /= total
    return out


def is_periodic(actions, period: int) -> bool:
    """True when each block of ``period`` searches visits every location once, in a fixed order."""
    seq = np.asarray(actions)
    head = seq[:period]
    if seq.size >= period and np.unique(head).size != period:
        return False
    if seq.size < period and np.unique(seq).size != seq.size:
        return False
    return bool(np.all(seq[period:] == seq[:-period])) if seq.size > period else True


def mean_completed_sweeps(alpha: float, position: int, n_locations: int) -> float:
    """Expected floor(tau / X) for a periodic searcher with common reveal probability.

    ``position`` is the 0-based slot of the target within the sweep. The count
    of failed sweeps is geometric with mean (1 - alpha)/alpha; a target in the
    last slot adds one because its detecting sweep completes exactly at tau.
    """
    if not 0 < alpha <= 1:
        raise InvalidModel("alpha must lie in (0, 1]")
    return (1.0 - alpha) / alpha + (1.0 if position == n_locations - 1 else 0.0)


class SearchTrials(Sequence):
    """Column store of search trials; iterates as SearchTrialRecord objects.

    Attributes:
        env, state, tau: per-trial arrays.
        counts: (n_trials, A) number of searches of each location.
        sequences: per-environment not-found action sequences; trial k
            searched ``sequences[env[k]][:tau[k]]``.
    """

    def __init__(self, env, state, tau, counts, sequences, n_envs: int, n_states: int):
        self.env = np.asarray(env, dtype=np.int64)
        self.state = np.asarray(state, dtype=np.int64)
        self.tau = np.asarray(tau, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.sequences = sequences
        self.n_envs, self.n_states = n_envs, n_states

    @classmethod
    def from_records(cls, records, n_envs=None, n_states=None):
        recs = list(records)
        ns = n_states if n_states is not None else 1 + max((max(r.actions) for r in recs), default=-1)
        counts = np.array([np.bincount(r.actions, minlength=ns) for r in recs], dtype=np.int64).reshape(-1, ns)
        obj = cls(
            [r.env for r in recs], [r.state for r in recs], [r.tau for r in recs], counts, None,
            n_envs if n_envs is not None else 1 + max((r.env for r in recs), default=-1), ns,
        )
        obj._records = recs
        return obj

    def __len__(self) -> int:
        return self.env.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        recs = getattr(self, "_records", None)
        if recs is not None:
            return recs[i]
        e, t = int(self.env[i]), int(self.tau[i])
        return SearchTrialRecord(e, int(self.state[i]), tuple(int(a) for a in self.sequences[e][:t]), t)


def simulate_search(
    env: SearchEnvironmentSet,
    trials_per_state: int,
    base_seed: int,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> SearchTrials:
    """Stratified simulation of ``trials_per_state`` episodes per (environment, state).

    Each visit to the true location reveals the target with probability
    alpha(x), so the number of visits up to detection is geometric. Trial k
    stops at the visit count drawn for it along the shared not-found sequence.
    """
    if trials_per_state < 1:
        raise ValueError("trials_per_state must be at least 1")
    K = int(trials_per_state)
    X = env.n_states
    alpha = env.model.reveal_probs
    cols = {"env": [], "state": [], "tau": [], "counts": []}
    sequences = []
    for m in range(env.n_envs):
        visits = [stratum_rng(base_seed, m, x).geometric(alpha[x], size=K) for x in range(X)]
        seq = _sequence_covering(env, m, [int(v.max()) for v in visits], max_steps)
        sequences.append(seq)
        cum = np.vstack([np.zeros(X, dtype=np.int64), np.cumsum(np.eye(X, dtype=np.int64)[seq], axis=0)])
        for x in range(X):
            positions = np.flatnonzero(seq == x)
            tau = positions[visits[x] - 1] + 1
            cols["env"].append(np.full(K, m))
            cols["state"].append(np.full(K, x))
            cols["tau"].append(tau)
            cols["counts"].append(cum[tau])
    return SearchTrials(
        np.concatenate(cols["env"]), np.concatenate(cols["state"]), np.concatenate(cols["tau"]),
        np.vstack(cols["counts"]), sequences, env.n_envs, X,
    )


def _sequence_covering(env, m, needed, max_steps):
    """Not-found sequence long enough that location x appears ``needed[x]`` times."""
    length = 64 * env.n_states
    while True:
        seq = not_found_sequence(env, m, min(length, max_steps))
        have = np.bincount(seq, minlength=env.n_states)
        if np.all(have >= needed):
            last = max(int(np.flatnonzero(seq == x)[n - 1]) for x, n in enumerate(needed))
            return seq[: last + 1]
        if length >= max_steps:
            raise HorizonExceeded(f"some trial needs more than {max_steps} searches")
        length *= 4
