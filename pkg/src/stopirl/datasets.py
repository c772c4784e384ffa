"""Inverse-learner datasets: aggregation from trial records and JSON storage.

Policies are stored as arrays indexed [m, x, a]. Files are canonical JSON
(sorted keys, shortest round-trip floats), so write -> read -> write
reproduces the same bytes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .beliefs import SIMPLEX_TOL, Belief, validate_simplex
from .errors import MissingStratum, SchemaViolation, VersionMismatch
from .search import SearchTrials
from .sht import ShtTrials

SCHEMA_VERSION = 1


def _readonly(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StoppingDataset:
    """Prior, per-environment stop-action policies p_m(a|x) and trial counts K_{x,m}.

    Attributes:
        prior: belief over states.
        policies: array (M, X, A); each row policies[m, x] sums to 1.
        counts: integer array (M, X).
    """

    prior: Belief
    policies: np.ndarray
    counts: np.ndarray

    kind = "stopping"

    def __post_init__(self):
        prior = self.prior if isinstance(self.prior, Belief) else validate_simplex(self.prior)
        object.__setattr__(self, "prior", prior)
        p = _readonly(self.policies)
        k = _readonly(self.counts, dtype=np.int64)
        _check_policies(p, "policies")
        if p.shape[1] != len(prior):
            raise SchemaViolation("policies", "state dimension differs from the prior")
        _check_counts(k, p.shape[:2])
        object.__setattr__(self, "policies", p)
        object.__setattr__(self, "counts", k)

    @property
    def n_envs(self) -> int:
        return self.policies.shape[0]

    @property
    def n_states(self) -> int:
        return self.policies.shape[1]

    @property
    def n_actions(self) -> int:
        return self.policies.shape[2]

    def joint(self) -> np.ndarray:
        """pi0(x) p_m(a|x) as an (M, X, A) array."""
        return self.prior.probs[None, :, None] * self.policies

    def action_probs(self) -> np.ndarray:
        """Unconditional action probabilities p_m(a), shape (M, A)."""
        return self.joint().sum(axis=1)

    def replace(self, **changes):
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return type(self)(**fields)

    def __eq__(self, other) -> bool:
        if type(other) is not type(self):
            return NotImplemented
        for name in self.__dataclass_fields__:
            a, b = getattr(self, name), getattr(other, name)
            if isinstance(a, (np.ndarray, Belief)):
                if not np.array_equal(np.asarray(a), np.asarray(b)):
                    return False
            elif a != b:
                return False
        return True


@dataclass(frozen=True, eq=False)
class SHTDataset(StoppingDataset):
    """Stopping dataset plus mean stopping times and an optional stopping-time bound."""

    mean_stopping_times: np.ndarray = None
    tau_max: int | None = None

    kind = "sht"

    def __post_init__(self):
        super().__post_init__()
        c = _readonly(self.mean_stopping_times)
        if c.shape != (self.n_envs,):
            raise SchemaViolation("mean_stopping_time", f"expected {self.n_envs} values")
        if not np.all(np.isfinite(c)) or np.any(c < 1.0):
            raise SchemaViolation("mean_stopping_time", "values must be finite and at least 1")
        if self.n_states != self.n_actions:
            raise SchemaViolation("policies", "hypothesis testing needs as many actions as states")
        if self.tau_max is not None:
            tm = int(self.tau_max)
            if tm < 1 or tm < np.max(c) - 1e-12:
                raise SchemaViolation("tau_max", "must be a positive bound on the stopping times")
            object.__setattr__(self, "tau_max", tm)
        object.__setattr__(self, "mean_stopping_times", c)


@dataclass(frozen=True, eq=False)
class SearchDataset:
    """Prior, per-environment expected search counts g_m(x, a) and trial counts."""

    prior: Belief
    search_policies: np.ndarray
    counts: np.ndarray

    kind = "search"

    def __post_init__(self):
        prior = self.prior if isinstance(self.prior, Belief) else validate_simplex(self.prior)
        object.__setattr__(self, "prior", prior)
        g = _readonly(self.search_policies)
        k = _readonly(self.counts, dtype=np.int64)
        if g.ndim != 3 or g.shape[0] < 2 or g.shape[1] != g.shape[2] or g.shape[1] != len(prior):
            raise SchemaViolation("search_policy", f"expected shape (M>=2, X, X) with X={len(prior)}, got {g.shape}")
        if not np.all(np.isfinite(g)) or np.any(g < 0):
            raise SchemaViolation("search_policy", "entries must be finite and nonnegative")
        diag = np.diagonal(g, axis1=1, axis2=2)
        if np.any(diag < 1.0 - 1e-12):
            raise SchemaViolation("search_policy", "each true location is searched at least once")
        _check_counts(k, g.shape[:2])
        object.__setattr__(self, "search_policies", g)
        object.__setattr__(self, "counts", k)

    @property
    def n_envs(self) -> int:
        return self.search_policies.shape[0]

    @property
    def n_states(self) -> int:
        return self.search_policies.shape[1]

    replace = StoppingDataset.replace
    __eq__ = StoppingDataset.__eq__


def _check_policies(p: np.ndarray, path: str):
    if p.ndim != 3 or p.shape[0] < 2:
        raise SchemaViolation(path, f"expected shape (M>=2, X, A), got {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise SchemaViolation(path, "entries must lie in [0, 1]")
    sums = p.sum(axis=2)
    bad = np.argwhere(np.abs(sums - 1.0) > SIMPLEX_TOL)
    if bad.size:
        m, x = bad[0]
        raise SchemaViolation(f"environments[{m}].policy[{x}]", f"row sums to {sums[m, x]!r}")


def _check_counts(k: np.ndarray, shape):
    if k.shape != tuple(shape):
        raise SchemaViolation("counts", f"expected shape {tuple(shape)}, got {k.shape}")
    if np.any(k < 1):
        raise SchemaViolation("counts", "every stratum needs at least one trial")


# ---------------------------------------------------------------- aggregation

def _stratum_counts(env, state, n_envs, n_states) -> np.ndarray:
    counts = np.zeros((n_envs, n_states), dtype=np.int64)
    np.add.at(counts, (env, state), 1)
    missing = np.argwhere(counts == 0)
    if missing.size:
        m, x = missing[0]
        raise MissingStratum(f"no trials for environment {m}, state {x}")
    return counts


def _as_sht_trials(records, prior, n_envs, n_actions) -> ShtTrials:
    if isinstance(records, ShtTrials):
        return records
    return ShtTrials.from_records(records, n_envs=n_envs, n_states=len(prior), n_actions=n_actions)


def aggregate_stopping(records, prior, n_envs: int | None = None, n_actions: int | None = None) -> StoppingDataset:
    """Empirical conditional policies p_m(a|x) = count(x, a, m) / count(x, m).

    Raises:
        MissingStratum: if some (environment, state) pair has no record.
    """
    prior = prior if isinstance(prior, Belief) else validate_simplex(prior)
    tr = _as_sht_trials(records, prior, n_envs, n_actions)
    M = n_envs or tr.n_envs
    X = len(prior)
    A = n_actions or max(tr.n_actions, X)
    counts = _stratum_counts(tr.env, tr.state, M, X)
    hits = np.zeros((M, X, A), dtype=np.int64)
    np.add.at(hits, (tr.env, tr.state, tr.action), 1)
    return StoppingDataset(prior, hits / counts[:, :, None], counts)


def aggregate_sht(records, prior, n_envs: int | None = None) -> SHTDataset:
    """Stopping aggregation plus the mean and maximum stopping time per environment."""
    prior = prior if isinstance(prior, Belief) else validate_simplex(prior)
    tr = _as_sht_trials(records, prior, n_envs, len(prior))
    base = aggregate_stopping(tr, prior, n_envs=n_envs, n_actions=len(prior))
    M = base.n_envs
    totals = np.zeros(M)
    np.add.at(totals, tr.env, tr.tau)
    mean_tau = totals / base.counts.sum(axis=1)
    return SHTDataset(base.prior, base.policies, base.counts, mean_tau, int(tr.tau.max()))


def aggregate_search(records, prior, n_envs: int | None = None) -> SearchDataset:
    """Average number of searches of each location given the true location."""
    prior = prior if isinstance(prior, Belief) else validate_simplex(prior)
    X = len(prior)
    tr = records if isinstance(records, SearchTrials) else SearchTrials.from_records(records, n_envs, X)
    M = n_envs or tr.n_envs
    counts = _stratum_counts(tr.env, tr.state, M, X)
    totals = np.zeros((M, X, X), dtype=np.int64)
    np.add.at(totals, (tr.env, tr.state), tr.counts)
    return SearchDataset(prior, totals / counts[:, :, None], counts)


# ------------------------------------------------------------------------ I/O

_NUM_MATRIX = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_COUNTS = {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}}

SCHEMA = {
    "type": "object",
    "required": ["schema_version", "kind", "prior", "environments"],
    "properties": {
        "schema_version": {"type": "integer"},
        "kind": {"enum": ["stopping", "sht", "search"]},
        "prior": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
        "tau_max": {"type": ["integer", "null"], "minimum": 1},
        "environments": {
            "type": "array",
            "minItems": 2,
            "items": {
                "type": "object",
                "required": ["id", "counts"],
                "properties": {
                    "id": {"type": "integer"},
                    "policy": _NUM_MATRIX,
                    "search_policy": _NUM_MATRIX,
                    "counts": _COUNTS,
                    "mean_stopping_time": {"type": "number"},
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}

_REQUIRED_BY_KIND = {
    "stopping": ("policy",),
    "sht": ("policy", "mean_stopping_time"),
    "search": ("search_policy",),
}


def _tolist(a) -> list:
    return np.asarray(a).tolist()


def dataset_to_dict(ds) -> dict:
    envs = []
    for m in range(ds.n_envs):
        e = {"id": m, "counts": _tolist(ds.counts[m])}
        if ds.kind == "search":
            e["search_policy"] = _tolist(ds.search_policies[m])
        else:
            e["policy"] = _tolist(ds.policies[m])
        if ds.kind == "sht":
            e["mean_stopping_time"] = float(ds.mean_stopping_times[m])
        envs.append(e)
    out = {"schema_version": SCHEMA_VERSION, "kind": ds.kind, "prior": _tolist(ds.prior.probs), "environments": envs}
    if ds.kind == "sht" and ds.tau_max is not None:
        out["tau_max"] = int(ds.tau_max)
    return out


def _path(error: jsonschema.ValidationError) -> str:
    out = "$"
    for part in error.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    return out


def dataset_from_dict(doc: dict):
    """Validate a parsed JSON document and build the matching dataset.

    Raises:
        VersionMismatch: unsupported ``schema_version``.
        SchemaViolation: structural or numerical violation, with its field path.
    """
    if isinstance(doc, dict) and "schema_version" in doc and doc["schema_version"] != SCHEMA_VERSION:
        raise VersionMismatch(f"schema_version {doc['schema_version']!r} is not supported (expected {SCHEMA_VERSION})")
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as err:
        raise SchemaViolation(_path(err), err.message) from None
    kind = doc["kind"]
    envs = doc["environments"]
    for i, e in enumerate(envs):
        for key in _REQUIRED_BY_KIND[kind]:
            if key not in e:
                raise SchemaViolation(f"$.environments[{i}]", f"missing '{key}' for kind '{kind}'")
        if e["id"] != i:
            raise SchemaViolation(f"$.environments[{i}].id", "ids must be 0, 1, ... in order")
    try:
        prior = validate_simplex(doc["prior"])
    except Exception as err:
        raise SchemaViolation("$.prior", str(err)) from None
    counts = _rectangular([e["counts"] for e in envs], "$.environments[*].counts")
    if kind == "search":
        g = _rectangular([e["search_policy"] for e in envs], "$.environments[*].search_policy")
        return SearchDataset(prior, g, counts)
    p = _rectangular([e["policy"] for e in envs], "$.environments[*].policy")
    for m, pm in enumerate(p):
        for x, row in enumerate(pm):
            if abs(sum(row) - 1.0) > SIMPLEX_TOL:
                raise SchemaViolation(f"$.environments[{m}].policy[{x}]", f"row sums to {sum(row)!r}")
    if kind == "stopping":
        return StoppingDataset(prior, p, counts)
    c = [e["mean_stopping_time"] for e in envs]
    return SHTDataset(prior, p, counts, c, doc.get("tau_max"))


def _rectangular(values, path):
    try:
        arr = np.array(values, dtype=float)
    except ValueError:
        raise SchemaViolation(path, "ragged array") from None
    if arr.dtype == object:
        raise SchemaViolation(path, "ragged array")
    return arr


def dumps_dataset(ds) -> str:
    return json.dumps(dataset_to_dict(ds), sort_keys=True, indent=2) + "\n"


def write_dataset(ds, path) -> None:
    Path(path).write_text(dumps_dataset(ds), encoding="utf-8")


def read_dataset(path):
    """Load any of the three dataset kinds from a JSON file."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise SchemaViolation("$", f"invalid JSON: {err}") from None
    return dataset_from_dict(doc)


def write_region_csv(samples, path, env: int) -> None:
    """Region samples as rows ``env,cost_1,cost_2,feasible``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["env", "cost_1", "cost_2", "feasible"])
        for (c1, c2), ok in samples:
            w.writerow([env, repr(float(c1)), repr(float(c2)), int(bool(ok))])
