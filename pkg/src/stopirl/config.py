"""Run configurations: JSON files describing environments, sample sizes and solver options."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .beliefs import GaussianObservationModel, SearchObservationModel, validate_simplex
from .errors import SchemaViolation
from .search import SearchEnvironmentSet
from .sht import EnvironmentSet

BUNDLED = ("sht_baseline", "sht_regularized", "search_baseline")

_VECTOR = {"type": "array", "minItems": 1, "items": {"type": "number"}}
_AXIS = {"type": "array", "minItems": 3, "maxItems": 3, "items": {"type": "number"}}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["name", "kind", "prior", "trials_per_state", "base_seed"],
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "kind": {"enum": ["stopping", "sht", "search"]},
        "prior": _VECTOR,
        "observation": {
            "type": "object",
            "required": ["means", "variances"],
            "properties": {"means": _VECTOR, "variances": _VECTOR},
            "additionalProperties": False,
        },
        "continue_cost": {"type": "number", "exclusiveMinimum": 0},
        "reveal_probs": _VECTOR,
        "environments": {
            "type": "array",
            "minItems": 2,
            "items": {
                "type": "object",
                "required": ["costs"],
                "properties": {"costs": {"type": "array", "minItems": 1}},
                "additionalProperties": False,
            },
        },
        "random_costs": {
            "type": "object",
            "required": ["n_envs", "low", "high", "seed"],
            "properties": {
                "n_envs": {"type": "integer", "minimum": 2},
                "low": {"type": "number", "exclusiveMinimum": 0},
                "high": {"type": "number"},
                "seed": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "trials_per_state": {"type": "integer", "minimum": 1},
        "base_seed": {"type": "integer", "minimum": 0},
        "solver": {
            "type": "object",
            "properties": {
                "mode": {"enum": ["potentials", "cycles"]},
                "lambda": {"type": "number", "minimum": 0},
                "lambda_sweep": _AXIS,
                "box": {"type": "number", "exclusiveMinimum": 0},
                "region_grid": {"type": "array", "minItems": 2, "maxItems": 2, "items": _AXIS},
                "strict_margin": {"type": "number", "minimum": 0},
                "alpha_star": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
            "additionalProperties": False,
        },
    },
    "oneOf": [{"required": ["environments"]}, {"required": ["random_costs"]}],
    "additionalProperties": False,
}


def schema_help() -> str:
    """Short description of the config layout for usage errors."""
    return (
        "config keys: name, kind (stopping|sht|search), prior, trials_per_state, base_seed,\n"
        "  observation {means, variances} for stopping/sht, reveal_probs for search,\n"
        "  environments [{costs}] or random_costs {n_envs, low, high, seed},\n"
        "  optional continue_cost and solver {mode, lambda, lambda_sweep, box, region_grid,\n"
        "  strict_margin, alpha_star}"
    )


@dataclass
class RunConfig:
    name: str
    kind: str
    prior: np.ndarray
    costs: np.ndarray
    trials_per_state: int
    base_seed: int
    means: np.ndarray | None = None
    variances: np.ndarray | None = None
    continue_cost: float = 1.0
    reveal_probs: np.ndarray | None = None
    solver: dict = field(default_factory=dict)
    sha256: str = ""

    def environment_set(self):
        if self.kind == "search":
            return SearchEnvironmentSet(
                validate_simplex(self.prior), SearchObservationModel(self.reveal_probs), self.costs
            )
        return EnvironmentSet(
            validate_simplex(self.prior),
            GaussianObservationModel(self.means, self.variances),
            self.costs,
            self.continue_cost,
        )

    def with_overrides(self, seed=None, trials=None) -> "RunConfig":
        out = RunConfig(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        if seed is not None:
            out.base_seed = int(seed)
        if trials is not None:
            out.trials_per_state = int(trials)
        return out


def _random_costs(spec: dict, n_states: int) -> np.ndarray:
    rng = np.random.default_rng(spec["seed"])
    out = []
    for _ in range(spec["n_envs"]):
        s = rng.uniform(spec["low"], spec["high"], (n_states, n_states))
        np.fill_diagonal(s, 0.0)
        out.append(s)
    return np.array(out)


def config_from_dict(doc: dict, sha256: str = "") -> RunConfig:
    """Validate and build a RunConfig.

    Raises:
        SchemaViolation: structural problems or inconsistent dimensions.
    """
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as err:
        path = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
        raise SchemaViolation(path, err.message) from None
    kind = doc["kind"]
    prior = np.array(doc["prior"], dtype=float)
    X = prior.size
    if "random_costs" in doc:
        if kind == "search":
            raise SchemaViolation("$.random_costs", "random costs are only defined for stopping tables")
        costs = _random_costs(doc["random_costs"], X)
    else:
        try:
            costs = np.array([e["costs"] for e in doc["environments"]], dtype=float)
        except ValueError:
            raise SchemaViolation("$.environments", "ragged cost tables") from None
    cfg = RunConfig(
        name=doc["name"], kind=kind, prior=prior, costs=costs,
        trials_per_state=doc["trials_per_state"], base_seed=doc["base_seed"],
        continue_cost=float(doc.get("continue_cost", 1.0)), solver=dict(doc.get("solver", {})),
        sha256=sha256,
    )
    if kind == "search":
        if "reveal_probs" not in doc:
            raise SchemaViolation("$.reveal_probs", "required for search configurations")
        cfg.reveal_probs = np.array(doc["reveal_probs"], dtype=float)
        if costs.ndim != 2 or costs.shape[1] != X or cfg.reveal_probs.size != X:
            raise SchemaViolation("$.environments", f"search costs and reveal probabilities need {X} entries")
    else:
        if "observation" not in doc:
            raise SchemaViolation("$.observation", "required for stopping configurations")
        cfg.means = np.array(doc["observation"]["means"], dtype=float)
        cfg.variances = np.array(doc["observation"]["variances"], dtype=float)
        if costs.ndim != 3 or costs.shape[1] != X or cfg.means.size != X or cfg.variances.size != X:
            raise SchemaViolation("$.environments", f"stopping cost tables and observation model need {X} states")
    return cfg


def load_config(path) -> RunConfig:
    raw = Path(path).read_bytes()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise SchemaViolation("$", f"invalid JSON: {err}") from None
    return config_from_dict(doc, hashlib.sha256(raw).hexdigest())


def bundled_config_path(name: str):
    """Path-like handle to one of the configurations shipped with the package."""
    if name not in BUNDLED:
        raise KeyError(f"no bundled configuration {name!r}; choose from {', '.join(BUNDLED)}")
    return resources.files("stopirl").joinpath("configs", f"{name}.json")


def load_bundled(name: str) -> RunConfig:
    handle = bundled_config_path(name)
    raw = handle.read_bytes()
    return config_from_dict(json.loads(raw.decode("utf-8")), hashlib.sha256(raw).hexdigest())
