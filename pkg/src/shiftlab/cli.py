"""Command-line entry point.

Every run writes its report to ``--out`` and a JSON sidecar ``<out>.json``
holding the fully resolved configuration; ``--config <sidecar>`` reruns it.
Errors go to stderr as ``ERROR <code> <message>``; exit status is 0 on
success, 1 for invalid input and 2 for generator or infeasibility failures.
"""

from __future__ import annotations

import argparse
import copy
import sys
from pathlib import Path

import numpy as np

from . import io
from .assignment import AssignmentInstance, compare_impact, evaluate_impact, solve_assignment
from .dist_core import IDENTITY_SCALING, PredictorTable
from .errors import ConfigError, ParseError, SchemaViolation, ShiftlabError
from .estimators import SampleSet, fit_sample_scaling, hat_tau_A, hat_tau_B, hat_tau_C
from .mc_lab import (
    ExperimentConfig,
    run_finite_sample_experiment,
    run_permutation_benchmark,
    run_theorem1_experiment,
    run_theorem2_experiment,
)
from .shifts import ShiftSpec, draw_shift, permute_covariates, validate_generator

RANDOMISED = {
    "verify-theorem1",
    "verify-theorem2",
    "finite-sample",
    "bench-permutation",
    "induce-shift",
    "validate-generator",
}

DEFAULTS = {
    "verify-theorem1": {
        "joint": {"fixture": "D0"},
        "shift_m2": {"kind": "symmetric_dirichlet", "kappa": 0.1},
        "shift_m1": {"kind": "symmetric_dirichlet", "kappa": 0.05},
        "n_reps": 10_000,
        "x_weighting": "period_m2",
        "n_batches": 20,
    },
    "verify-theorem2": {
        "joint": {"fixture": "D0"},
        "shift_m2": {"kind": "asymmetric_marginal", "kappa": 0.3},
        "shift_m1": {"kind": "asymmetric_marginal", "kappa": 0.3},
        "n_reps": 10_000,
        "x_weighting": "period_m2",
        "n_batches": 20,
    },
    "finite-sample": {
        "joint": {"fixture": "D0"},
        "x": None,
        "n_m2": 20_000,
        "n_m1": 10_000,
        "n_reps": 2_000,
        "linear_proxy_beta": None,
    },
    "bench-permutation": {
        "joint": {"fixture": "latent_score"},
        "dataset": None,
        "shift_grid": [0.0, 0.25, 0.5, 0.75, 1.0],
        "proxy_strengths": [0.0],
        "n_splits": 200,
        "n_total": 3000,
    },
    "validate-generator": {
        "joint": {"fixture": "D0"},
        "shift": {"kind": "symmetric_dirichlet", "kappa": 0.2},
        "n_draws": 100_000,
        "n_sigma": 4.0,
    },
    "induce-shift": {
        "joint": {"fixture": "D0"},
        "shift": {"kind": "symmetric_dirichlet", "kappa": 0.1},
        "dataset": None,
        "fraction": 0.5,
        "rounds": 1,
    },
    "estimate": {
        "method": None,
        "train_m2": None,
        "train_m1": None,
        "target": None,
        "scaling": "identity",
    },
    "assign": {
        "weights": None,
        "capacities": None,
        "truth": None,
        "baseline": None,
    },
}

PATH_KEYS = ("dataset", "train_m2", "train_m1", "target", "weights", "capacities", "truth", "baseline")


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors reported as exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"ERROR UsageError {message}\n")
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shiftlab", description="Prediction under random distribution shift.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(p, out_help="report CSV path"):
        p.add_argument("--config", help="JSON scenario config (or a previous run's sidecar)")
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed; overrides the config")
        return p

    common(sub.add_parser("verify-theorem1", help="MSE of the three predictors under symmetric shifts"))
    common(sub.add_parser("verify-theorem2", help="MSE ordering under proxy-marginal shifts"))
    common(sub.add_parser("finite-sample", help="n * Var of plug-in estimates vs asymptotic variances"))
    p = common(sub.add_parser("bench-permutation", help="permutation-induced shift benchmark"))
    p.add_argument("--dataset", help="period,x,y1,y2 CSV to resample instead of a synthetic joint")
    common(sub.add_parser("validate-generator", help="moment checks of a shift generator"))
    p = common(sub.add_parser("induce-shift", help="draw one shift of a joint, or permute a dataset"))
    p.add_argument("--dataset", help="dataset whose covariates are permuted")
    p.add_argument("--fraction", type=float)
    p.add_argument("--rounds", type=int)
    p = common(sub.add_parser("estimate", help="plug-in predictions from CSV samples"), "predictions CSV path")
    p.add_argument("--method", choices=["A", "B", "C"])
    p.add_argument("--train-m2", dest="train_m2")
    p.add_argument("--train-m1", dest="train_m1")
    p.add_argument("--target")
    p.add_argument("--scaling", choices=["identity", "fit"])
    p = common(sub.add_parser("assign", help="capacity-constrained group assignment"), "assignment CSV path")
    p.add_argument("--weights", help="CSV unit,group,<location columns>")
    p.add_argument("--capacities", help="CSV location,capacity")
    p.add_argument("--truth", help="true weights in the weights layout, for impact")
    p.add_argument("--baseline", help="CSV unit,location with a reference assignment")
    return parser


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS[command])
    raw = {}
    base_dir = Path.cwd()
    if args.config:
        raw = io.load_config(args.config)
        base_dir = Path(args.config).resolve().parent
        if raw.get("command", command) != command:
            raise ConfigError(f"config was written for {raw['command']!r}, not {command!r}")
    unknown = set(raw) - set(cfg) - {"schema_version", "seed", "command"}
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
    cfg.update({k: v for k, v in raw.items() if k in cfg})
    for key in PATH_KEYS:
        if key in cfg and cfg[key] is not None and key in raw:
            cfg[key] = str((base_dir / cfg[key]).resolve())
    for key in cfg:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = str(Path(flag).resolve()) if key in PATH_KEYS else flag
    seed = args.seed if args.seed is not None else raw.get("seed")
    if seed is None and command in RANDOMISED:
        raise ConfigError("a seed is required (--seed or \"seed\" in the config)")
    if seed is not None:
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    cfg["seed"] = seed
    cfg["command"] = command
    cfg["schema_version"] = io.SCHEMA_VERSION
    return cfg


def _spec(d) -> ShiftSpec:
    if not isinstance(d, dict) or "kappa" not in d:
        raise ConfigError("shift specs need at least a 'kappa' entry")
    return ShiftSpec.from_dict(d)


def _experiment(cfg: dict) -> ExperimentConfig:
    return ExperimentConfig(
        base_joint=io.joint_from_config(cfg["joint"]),
        shift_spec_m2=_spec(cfg["shift_m2"]),
        shift_spec_m1=_spec(cfg["shift_m1"]),
        n_reps=int(cfg["n_reps"]),
        seed=cfg["seed"],
        x_weighting=cfg["x_weighting"],
        n_batches=int(cfg["n_batches"]),
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

MSE_HEADER = ("method", "empirical_mse", "mc_se", "theory_total", "pass")


def cmd_verify_theorem1(cfg, out):
    report = run_theorem1_experiment(_experiment(cfg))
    rows = [(m.method, m.empirical_mse, m.mc_standard_error, m.theory_total, m.passed)
            for m in report.methods.values()]
    io.write_report(out, MSE_HEADER, rows)


def cmd_verify_theorem2(cfg, out):
    report = run_theorem2_experiment(_experiment(cfg))
    rows = [(m.method, m.empirical_mse, m.mc_standard_error, None, m.passed)
            for m in report.methods.values()]
    io.write_report(out, MSE_HEADER, rows)


def cmd_finite_sample(cfg, out):
    joint = io.joint_from_config(cfg["joint"])
    if cfg["x"] is None:
        cfg["x"] = joint.alphabet.x_labels[0]
    beta = cfg["linear_proxy_beta"]
    report = run_finite_sample_experiment(
        joint, cfg["x"], int(cfg["n_m2"]), int(cfg["n_m1"]), int(cfg["n_reps"]), cfg["seed"],
        None if beta is None else (float(beta[0]), float(beta[1])),
    )
    rows = [(r.method, "n_var", r.n_var, r.se, r.oracle, r.passed) for r in report.results.values()]
    if report.proxy_bias is not None:
        b = report.proxy_bias
        rows.append(("B_scaled", "bias", b["empirical"], b["se"], b["population"], None))
    io.write_report(out, ("method", "metric", "value", "mc_se", "oracle", "pass"), rows)


def cmd_bench_permutation(cfg, out):
    kwargs = dict(
        shift_grid=[float(f) for f in cfg["shift_grid"]],
        proxy_strengths=[float(q) for q in cfg["proxy_strengths"]],
        n_splits=int(cfg["n_splits"]),
        seed=cfg["seed"],
        n_total=int(cfg["n_total"]),
    )
    if cfg["dataset"] is not None:
        table = run_permutation_benchmark(samples=io.load_dataset(cfg["dataset"]), **kwargs)
    else:
        table = run_permutation_benchmark(joint=io.joint_from_config(cfg["joint"]), **kwargs)
    header = ("proxy_strength", "shift", "method", "mse", "mse_se", "r2", "r2_se", "n_splits")
    io.write_report(out, header, [[row[k] for k in header] for row in table.rows])


def cmd_validate_generator(cfg, out):
    joint = io.joint_from_config(cfg["joint"])
    rng = np.random.default_rng(cfg["seed"])
    report = validate_generator(_spec(cfg["shift"]), joint, int(cfg["n_draws"]), rng, float(cfg["n_sigma"]))
    rows = [(c.x, c.statistic, c.event, c.empirical, c.expected, c.se, c.passed) for c in report.checks]
    io.write_report(out, ("x", "statistic", "event", "empirical", "expected", "se", "pass"), rows)


def cmd_induce_shift(cfg, out):
    rng = np.random.default_rng(cfg["seed"])
    if cfg["dataset"] is not None:
        samples = io.load_dataset(cfg["dataset"])
        io.save_dataset(permute_covariates(samples, float(cfg["fraction"]), int(cfg["rounds"]), rng), out)
        return
    joint = io.joint_from_config(cfg["joint"])
    draw, shifted = draw_shift(_spec(cfg["shift"]), joint, rng)
    a = joint.alphabet
    rows = []
    for i, x in enumerate(a.x_labels):
        for j, y1 in enumerate(a.y1_levels):
            for k, y2 in enumerate(a.y2_levels):
                rows.append((x, y1, y2, joint.table[i, j, k], shifted.table[i, j, k], draw.delta[i, j, k]))
    io.write_report(out, ("x", "y1", "y2", "base", "shifted", "delta"), rows)


def _load_optional(path):
    return None if path is None else io.load_dataset(path)


def cmd_estimate(cfg, out):
    method = cfg["method"]
    if method not in ("A", "B", "C"):
        raise ConfigError("estimate needs --method A, B or C")
    if cfg["target"] is None:
        raise ConfigError("estimate needs --target")
    needs = {"A": ("train_m2",), "B": ("train_m1",), "C": ("train_m2", "train_m1")}[method]
    if method == "B" and cfg["scaling"] == "fit":
        needs = ("train_m2", "train_m1")
    for key in needs:
        if cfg[key] is None:
            raise ConfigError(f"method {method} needs --{key.replace('_', '-')}")
    samples = SampleSet.from_rows([])
    for key in ("train_m2", "train_m1", "target"):
        if cfg[key] is not None:
            samples = samples.concat(io.load_dataset(cfg[key]))
    labels = samples.of_period(0).x_labels()
    if method == "A":
        table = hat_tau_A(samples, labels)
    elif method == "B":
        scaling = fit_sample_scaling(samples) if cfg["scaling"] == "fit" else IDENTITY_SCALING
        table = hat_tau_B(samples, scaling, labels)
    else:
        table = hat_tau_C(samples, labels)
    _write_predictions(out, table)


def _write_predictions(out, table: PredictorTable):
    rows = [(x, v, x in table.flagged) for x, v in zip(table.x_labels, table.values)]
    io.write_report(out, ("x", "prediction", "flagged"), rows)


def _read_weights(path):
    import csv

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or len(header) < 3 or header[0] != "unit" or header[1] != "group":
            raise SchemaViolation(1, "weights header must be unit,group,<location>...")
        units, groups, rows = [], [], []
        for record in reader:
            if len(record) != len(header):
                raise ParseError(reader.line_num, f"expected {len(header)} fields, got {len(record)}")
            units.append(record[0])
            groups.append(record[1])
            try:
                rows.append([float(v) for v in record[2:]])
            except ValueError:
                raise ParseError(reader.line_num, "weights must be numbers") from None
    return units, groups, header[2:], np.array(rows, dtype=float).reshape(len(units), len(header) - 2)


def _read_two_columns(path, first, second, cast):
    import csv

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != [first, second]:
            raise SchemaViolation(1, f"header must be {first},{second}")
        out = {}
        for record in reader:
            if len(record) != 2:
                raise ParseError(reader.line_num, "expected 2 fields")
            try:
                out[record[0]] = cast(record[1])
            except ValueError:
                raise ParseError(reader.line_num, f"bad {second} value {record[1]!r}") from None
    return out


def cmd_assign(cfg, out):
    if cfg["weights"] is None or cfg["capacities"] is None:
        raise ConfigError("assign needs --weights and --capacities")
    units, groups, locations, w = _read_weights(cfg["weights"])
    caps = _read_two_columns(cfg["capacities"], "location", "capacity", int)
    missing = [loc for loc in locations if loc not in caps]
    if missing:
        raise SchemaViolation(None, f"no capacity for locations {missing}")
    instance = AssignmentInstance(w, [caps[loc] for loc in locations], groups)
    result = solve_assignment(instance)
    rows = [(u, g, locations[j]) for u, g, j in zip(units, groups, result.location_of)]
    rows.append(("__objective__", "", result.objective))
    if cfg["truth"] is not None:
        t_units, _, t_locs, truth = _read_weights(cfg["truth"])
        if t_units != units or t_locs != locations:
            raise SchemaViolation(None, "truth weights must list the same units and locations")
        if cfg["baseline"] is not None:
            base_map = _read_two_columns(cfg["baseline"], "unit", "location", str)
            baseline = type(result)(tuple(locations.index(base_map[u]) for u in units), 0.0)
            cmp = compare_impact(result, baseline, truth)
            rows += [("__impact__", "", cmp["impact"]), ("__baseline_impact__", "", cmp["baseline_impact"]),
                     ("__impact_delta__", "", cmp["delta"])]
        else:
            rows.append(("__impact__", "", evaluate_impact(result, truth)))
    io.write_report(out, ("unit", "group", "location"), rows)


COMMANDS = {
    "verify-theorem1": cmd_verify_theorem1,
    "verify-theorem2": cmd_verify_theorem2,
    "finite-sample": cmd_finite_sample,
    "bench-permutation": cmd_bench_permutation,
    "validate-generator": cmd_validate_generator,
    "induce-shift": cmd_induce_shift,
    "estimate": cmd_estimate,
    "assign": cmd_assign,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        cfg = resolve_config(args.command, args)
        COMMANDS[args.command](cfg, args.out)
        io.write_sidecar(args.out, cfg)
    except ShiftlabError as exc:
        sys.stderr.write(f"ERROR {exc.code} {exc}\n")
        return exc.exit_code
    except (ValueError, KeyError) as exc:
        sys.stderr.write(f"ERROR {type(exc).__name__} {exc}\n")
        return 1
    except FileNotFoundError as exc:
        sys.stderr.write(f"ERROR FileNotFound {exc.filename}\n")
        return 1
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
