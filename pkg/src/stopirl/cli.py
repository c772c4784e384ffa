"""Command-line interface.

Exit codes: 0 success, 1 an infeasible / H1 verdict, 2 an error.
Every command that writes a file also writes ``<file>.manifest.json`` with
input hashes, the seed and library versions.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__
from .config import BUNDLED, load_bundled, load_config, schema_help
from .datasets import (
    aggregate_search,
    aggregate_sht,
    aggregate_stopping,
    read_dataset,
    write_dataset,
    write_region_csv,
)
from .errors import SchemaViolation, StopIRLError
from .finite_sample import irl_detector
from .irl_search import check_feasibility_search, sample_search_region, search_residuals
from .irl_sht import (
    check_feasibility_sht,
    normalized_error,
    regularized_point_estimate,
    sample_sht_region,
    sht_costs_feasible,
    sht_residuals,
)
from .irl_stopping import (
    check_feasibility_stopping,
    reconstruct_continue_costs,
    sample_feasible_region,
)
from .search import SearchTrials, simulate_search
from .sht import ShtTrials, solve_sht_policy, simulate_sht

EXIT_OK, EXIT_REJECT, EXIT_ERROR = 0, 1, 2


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- helpers

def _versions() -> dict:
    out = {"stopirl": __version__, "python": platform.python_version()}
    for dist in ("numpy", "scipy", "cvxpy", "jsonschema"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = "unknown"
    return out


def _sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _finite(obj):
    """Replace non-finite floats by strings so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def _write_manifest(out_path, command: str, inputs: dict, seed=None, config_sha=None):
    manifest = {
        "command": command,
        "config_sha256": config_sha,
        "inputs": {k: _sha(v) for k, v in sorted(inputs.items()) if v is not None},
        "seed": seed,
        "versions": _versions(),
    }
    Path(str(out_path) + ".manifest.json").write_text(_dump(manifest), encoding="utf-8")


def _emit(result: dict, out):
    text = _dump(_finite(result))
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _parse_grid(spec: str):
    try:
        lo, hi, steps = spec.split(",")
        return (float(lo), float(hi), int(steps))
    except ValueError:
        raise UsageError(f"--grid expects 'min,max,steps', got {spec!r}") from None


def _parse_lambdas(spec: str):
    try:
        vals = [float(v) for v in spec.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--lambda expects comma-separated numbers, got {spec!r}") from None
    if not vals:
        raise UsageError("--lambda needs at least one value")
    return vals


def _load_costs(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    costs = doc["costs"] if isinstance(doc, dict) else doc
    return np.array(costs, dtype=float)


# ----------------------------------------------------------- simulation

def _simulate(cfg):
    env = cfg.environment_set()
    if cfg.kind == "search":
        return env, simulate_search(env, cfg.trials_per_state, cfg.base_seed)
    policies = [solve_sht_policy(env, m) for m in range(env.n_envs)]
    return env, simulate_sht(env, cfg.trials_per_state, cfg.base_seed, policies)


def _aggregate(cfg, trials):
    if cfg.kind == "search":
        return aggregate_search(trials, cfg.prior, n_envs=len(cfg.costs))
    if cfg.kind == "sht":
        return aggregate_sht(trials, cfg.prior, n_envs=len(cfg.costs))
    return aggregate_stopping(trials, cfg.prior, n_envs=len(cfg.costs), n_actions=cfg.costs.shape[2])


def write_trials_csv(trials, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if isinstance(trials, SearchTrials):
            w.writerow(["env", "state", "tau"] + [f"visits_{a}" for a in range(trials.counts.shape[1])])
            for row in zip(trials.env, trials.state, trials.tau, *trials.counts.T):
                w.writerow([int(v) for v in row])
        else:
            w.writerow(["env", "state", "action", "tau"])
            for row in zip(trials.env, trials.state, trials.action, trials.tau):
                w.writerow([int(v) for v in row])


def read_trials_csv(path, cfg):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaViolation("$", "empty trial file")
    header, body = rows[0], rows[1:]
    try:
        data = np.array(body, dtype=np.int64).reshape(len(body), len(header))
    except ValueError:
        raise SchemaViolation("$", "trial rows must be integers with one value per column") from None
    M, X = len(cfg.costs), cfg.prior.size
    if cfg.kind == "search":
        if header[:3] != ["env", "state", "tau"] or len(header) != 3 + X:
            raise SchemaViolation("$.header", "expected env,state,tau,visits_0..")
        return SearchTrials(data[:, 0], data[:, 1], data[:, 2], data[:, 3:], None, M, X)
    if header != ["env", "state", "action", "tau"]:
        raise SchemaViolation("$.header", "expected env,state,action,tau")
    return ShtTrials(data[:, 0], data[:, 1], data[:, 2], data[:, 3], M, X, cfg.costs.shape[2])


# --------------------------------------------------------------- commands

def _test_dataset(ds, mode="potentials", strict_margin=None):
    if ds.kind == "search":
        kw = {} if strict_margin is None else {"strict_margin": strict_margin}
        return check_feasibility_search(ds, **kw)
    if ds.kind == "sht":
        return check_feasibility_sht(ds)
    return check_feasibility_stopping(ds, mode=mode)


def cmd_simulate(args):
    cfg = load_config(args.config).with_overrides(args.seed, args.trials)
    _, trials = _simulate(cfg)
    write_trials_csv(trials, args.out)
    _write_manifest(args.out, "simulate", {"config": args.config}, cfg.base_seed, cfg.sha256)
    if args.dataset_out:
        write_dataset(_aggregate(cfg, trials), args.dataset_out)
        _write_manifest(args.dataset_out, "simulate", {"config": args.config}, cfg.base_seed, cfg.sha256)
    return EXIT_OK


def cmd_aggregate(args):
    cfg = load_config(args.config)
    ds = _aggregate(cfg, read_trials_csv(args.records, cfg))
    write_dataset(ds, args.out)
    _write_manifest(args.out, "aggregate", {"config": args.config, "records": args.records}, None, cfg.sha256)
    return EXIT_OK


def cmd_test(args):
    ds = read_dataset(args.dataset)
    res = _test_dataset(ds, args.mode, args.strict_margin)
    _emit(res.to_dict(), args.out)
    if args.out:
        _write_manifest(args.out, "test", {"dataset": args.dataset})
    return EXIT_OK if res.feasible else EXIT_REJECT


def cmd_reconstruct(args):
    ds = read_dataset(args.dataset)
    if args.costs:
        costs = _load_costs(args.costs)
        feasible = True
    else:
        res = _test_dataset(ds, args.mode, args.strict_margin)
        if not res.feasible:
            _emit({"feasible": False, "status": res.solver_status}, args.out)
            return EXIT_REJECT
        costs, feasible = np.array(res.witness_costs), res.feasible
    out = {"feasible": bool(feasible), "costs": np.asarray(costs).tolist()}
    if ds.kind == "sht":
        out["continue_costs"] = np.asarray(ds.mean_stopping_times).tolist()
        out["residuals"] = sht_residuals(ds, costs)
    elif ds.kind == "stopping":
        out["continue_costs"] = reconstruct_continue_costs(ds, costs, tol=1e-7).tolist()
    else:
        out["residuals"] = search_residuals(ds, costs)
    _emit(out, args.out)
    if args.out:
        _write_manifest(args.out, "reconstruct", {"dataset": args.dataset, "costs": args.costs})
    return EXIT_OK


def _estimate_rows(ds, lambdas, box, constrained, truth):
    rows = []
    for lam in lambdas:
        est = regularized_point_estimate(ds, lam, box=box, constrained=constrained)
        err = None if truth is None else normalized_error(est.costs, truth)
        rows.append((lam, est, err))
    return rows


def cmd_estimate(args):
    ds = read_dataset(args.dataset)
    if ds.kind != "sht":
        raise UsageError("estimate needs a hypothesis-testing dataset")
    truth = load_config(args.config).costs if args.config else None
    rows = _estimate_rows(ds, _parse_lambdas(args.lambda_), args.box, not args.unconstrained, truth)
    if args.out and args.out.endswith(".csv"):
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda", "normalized_error", "margin", "feasible"])
            for lam, est, err in rows:
                w.writerow([repr(float(lam)), "" if err is None else repr(err), repr(est.margin_value),
                            int(sht_costs_feasible(ds, est.costs))])
    else:
        _emit({"estimates": [est.to_dict(err) for _, est, err in rows]}, args.out)
    if args.out:
        _write_manifest(args.out, "estimate", {"dataset": args.dataset, "config": args.config})
    return EXIT_OK


def cmd_detect(args):
    ds = read_dataset(args.dataset)
    kind = args.kind or ds.kind
    res = irl_detector(ds, kind, bounds=not args.no_bounds, alpha_star=args.alpha_star)
    out = res.to_dict()
    if not args.full:
        out.pop("feasibility")
    _emit(out, args.out)
    if args.out:
        _write_manifest(args.out, "detect", {"dataset": args.dataset})
    return EXIT_OK if res.hypothesis == "H0" else EXIT_REJECT


def _region(ds, env, fixed, grid, strict_margin=None):
    if ds.kind == "search":
        kw = {} if strict_margin is None else {"strict_margin": strict_margin}
        return sample_search_region(ds, env, fixed, grid, **kw)
    if ds.kind == "sht":
        return sample_sht_region(ds, env, fixed, grid)
    return sample_feasible_region(ds, env, fixed, grid)


def cmd_region(args):
    ds = read_dataset(args.dataset)
    if not 0 <= args.env < ds.n_envs:
        raise UsageError(f"--env must lie in [0, {ds.n_envs - 1}]")
    g1 = _parse_grid(args.grid)
    g2 = _parse_grid(args.grid2) if args.grid2 else g1
    if args.costs:
        fixed = _load_costs(args.costs)
    elif args.config:
        fixed = load_config(args.config).costs
    else:
        res = _test_dataset(ds, strict_margin=args.strict_margin)
        if not res.feasible:
            raise UsageError("dataset is infeasible; pass --costs or --config for the fixed costs")
        fixed = np.array(res.witness_costs)
    samples = _region(ds, args.env, fixed, (g1, g2), args.strict_margin)
    write_region_csv(samples, args.out, args.env)
    _write_manifest(args.out, "region", {"dataset": args.dataset, "config": args.config, "costs": args.costs})
    return EXIT_OK


# ------------------------------------------------------------------- repro

def _axis(spec):
    return (float(spec[0]), float(spec[1]), int(spec[2]))


def run_repro(cfg, out_dir: Path) -> dict:
    """Simulate, test and export one configuration; returns its summary."""
    _, trials = _simulate(cfg)
    ds = _aggregate(cfg, trials)
    name = cfg.name
    write_dataset(ds, out_dir / f"{name}_dataset.json")
    res = _test_dataset(ds, cfg.solver.get("mode", "potentials"), cfg.solver.get("strict_margin"))
    summary = {"name": name, "kind": cfg.kind, "feasible": bool(res.feasible), "status": res.solver_status}
    if cfg.kind == "search":
        true_res = search_residuals(ds, cfg.costs, cfg.solver.get("strict_margin", 1e-9))
    elif cfg.kind == "sht":
        true_res = sht_residuals(ds, cfg.costs)
        summary["mean_stopping_times"] = ds.mean_stopping_times.tolist()
        summary["tau_max"] = ds.tau_max
    else:
        true_res = None
    if true_res is not None:
        summary["true_cost_max_residual"] = max(true_res.values())
    if "region_grid" in cfg.solver:
        grid = tuple(_axis(a) for a in cfg.solver["region_grid"])
        files = []
        for m in range(ds.n_envs):
            path = out_dir / f"{name}_region_env{m}.csv"
            write_region_csv(_region(ds, m, cfg.costs, grid, cfg.solver.get("strict_margin")), path, m)
            files.append(path.name)
        summary["region_files"] = files
    if "lambda_sweep" in cfg.solver and cfg.kind == "sht":
        lo, hi, n = _axis(cfg.solver["lambda_sweep"])
        lambdas = np.logspace(np.log10(lo), np.log10(hi), n)
        path = out_dir / f"{name}_lambda_sweep.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda", "error_constrained", "error_closed_form"])
            errs = {}
            for constrained in (True, False):
                errs[constrained] = [e for _, _, e in _estimate_rows(ds, lambdas, None, constrained, cfg.costs)]
            for k, lam in enumerate(lambdas):
                w.writerow([repr(float(lam)), repr(errs[True][k]), repr(errs[False][k])])
        box = cfg.solver.get("box", 100.0)
        est0 = regularized_point_estimate(ds, 0.0, box=box)
        summary["lambda_sweep_file"] = path.name
        summary["min_error_constrained"] = min(errs[True])
        summary["min_error_closed_form"] = min(errs[False])
        summary["box_zero_estimate_feasible"] = bool(sht_costs_feasible(ds, est0.costs))
    return summary


def cmd_repro(args):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.config:
        configs = [load_config(p) for p in args.config]
    else:
        configs = [load_bundled(n) for n in (args.only or BUNDLED)]
    configs = [c.with_overrides(args.seed, args.trials) for c in configs]
    summaries = [run_repro(c, out_dir) for c in configs]
    (out_dir / "summary.json").write_text(_dump(_finite({"runs": summaries})), encoding="utf-8")
    manifest = {
        "command": "repro",
        "configs": {c.name: {"config_sha256": c.sha256, "seed": c.base_seed, "trials_per_state": c.trials_per_state}
                    for c in configs},
        "versions": _versions(),
    }
    (out_dir / "manifest.json").write_text(_dump(manifest), encoding="utf-8")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stopirl", description="Simulate stopping agents and test them for Bayes-optimality.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate trials from a config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="trial records CSV")
    s.add_argument("--dataset-out", help="also write the aggregated dataset JSON")
    s.add_argument("--seed", type=int)
    s.add_argument("--trials", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("aggregate", help="aggregate trial records into a dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--records", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_aggregate)

    def dataset_cmd(name, helptext, func):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--dataset", required=True)
        s.add_argument("--out")
        s.add_argument("--mode", choices=("cycles", "potentials"), default="potentials")
        s.add_argument("--strict-margin", type=float)
        s.set_defaults(func=func)
        return s

    dataset_cmd("test", "feasibility test", cmd_test)
    s = dataset_cmd("reconstruct", "witness costs and continue costs", cmd_reconstruct)
    s.add_argument("--costs", help="JSON file with stopping costs to use instead of the witness")

    s = dataset_cmd("estimate", "regularised point estimate", cmd_estimate)
    s.add_argument("--lambda", dest="lambda_", required=True, help="value or comma-separated sweep")
    s.add_argument("--box", type=float)
    s.add_argument("--unconstrained", action="store_true", help="closed-form estimate without feasibility constraints")
    s.add_argument("--config", help="config with the true costs, for normalised errors")

    s = dataset_cmd("detect", "IRL detector with error bounds", cmd_detect)
    s.add_argument("--kind", choices=("stopping", "sht", "search"))
    s.add_argument("--alpha-star", type=float)
    s.add_argument("--no-bounds", action="store_true")
    s.add_argument("--full", action="store_true", help="include the feasibility result")

    s = dataset_cmd("region", "sample the feasible cost region of one environment", cmd_region)
    s.add_argument("--env", type=int, required=True)
    s.add_argument("--grid", required=True, help="'min,max,steps' for both axes")
    s.add_argument("--grid2", help="'min,max,steps' for the second axis")
    s.add_argument("--config", help="take the fixed costs from this config")
    s.add_argument("--costs", help="take the fixed costs from this JSON file")

    s = sub.add_parser("repro", help="run configurations end to end and write region and sweep CSVs")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--config", action="append", help="config file (repeatable); default: bundled set")
    s.add_argument("--only", action="append", choices=BUNDLED, help="subset of the bundled set")
    s.add_argument("--seed", type=int)
    s.add_argument("--trials", type=int)
    s.set_defaults(func=cmd_repro)
    return p


def cli_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    try:
        return args.func(args)
    except SchemaViolation as err:
        print(f"error: {err}", file=sys.stderr)
        print(schema_help(), file=sys.stderr)
        return EXIT_ERROR
    except (StopIRLError, UsageError, KeyError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
