"""Command-line front end.

Four subcommands: ``fit`` (kink-count selection and estimation on a CSV),
``test`` (kink-existence score test with wild-bootstrap p-value), ``ci``
(confidence intervals for kink locations) and ``simulate`` (Monte Carlo
studies from a scenario config).  Results are emitted as JSON with floats
rendered at 17 significant digits so fixed-seed runs are bit-comparable.

Exit codes: 0 success, 2 malformed input, 3 numerical failure, 4 usage error.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import harness
from .brisq import BrisqSettings
from .errors import (
    BandwidthError,
    ConvergenceError,
    DegenerateBootstrapError,
    RankError,
    UsageError,
)
from .infer import bootstrap_ci, covariance, srs_invert_ci, wald_ci, wild_bootstrap_pvalue
from .kselect import backward_eliminate
from .model import Dataset, predict_quantile
from .simgen import ScenarioSpec, generate, parse_config

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_USAGE = 4

SEED_ENV_VAR = "KINKQR_SEED"


class InputError(Exception):
    """Malformed input file; maps to exit code 2."""


@dataclass
class RunConfig:
    """Parsed invocation of one CLI command."""

    command: str
    input_path: str | None = None
    taus: list[float] = field(default_factory=lambda: [0.5])
    kmax: int = 10
    cn_rule: str = "log_n"
    bootstrap: int = 300
    methods: list[str] = field(default_factory=lambda: ["wald"])
    level: float = 0.95
    seed: int = 0
    output_path: str | None = None
    emit_curve: str | None = None
    timing: bool = False
    jobs: int = 1

    def __post_init__(self):
        for t in self.taus:
            if not (0.0 < t < 1.0):
                raise UsageError(f"tau must lie in (0, 1), got {t}")
        if self.bootstrap < 1:
            raise UsageError("bootstrap replicate count must be >= 1")
        if not (0.0 < self.level < 1.0):
            raise UsageError("level must lie in (0, 1)")


def format_json(obj, indent: int = 0) -> str:
    """Render JSON with floats at 17 significant digits; non-finite -> null."""
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f'{pad}  "{key}": {format_json(value, indent + 1)}' for key, value in obj.items()
        ]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if len(obj) == 0:
            return "[]"
        items = [f"{pad}  {format_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    if isinstance(obj, str):
        import json as _json

        return _json.dumps(obj)
    if isinstance(obj, bool) or isinstance(obj, np.bool_):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    v = float(obj)
    if not math.isfinite(v):
        return "null"
    return format(v, ".17g")


def read_dataset_csv(path: str) -> tuple[Dataset, list[str]]:
    """Load a dataset from a CSV with header ``y,x[,z1..zp]``.

    Rows in diagnostics are 1-based over data rows (the header is row 0).
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}")
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file, expected a header row")
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "y" or header[1] != "x":
            raise InputError(
                f"{path}: header must start with columns 'y,x', got {','.join(header) or '<empty>'}"
            )
        z_names = header[2:]
        rows = []
        for rownum, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and row[0].strip() == ""):
                continue
            if len(row) != len(header):
                raise InputError(
                    f"{path}: row {rownum} has {len(row)} fields, expected {len(header)}"
                )
            values = []
            for colname, cell in zip(header, row):
                cell = cell.strip()
                if cell == "":
                    raise InputError(f"{path}: missing value at row {rownum}, column '{colname}'")
                try:
                    values.append(float(cell))
                except ValueError:
                    raise InputError(
                        f"{path}: non-numeric value {cell!r} at row {rownum}, column '{colname}'"
                    )
            if not all(math.isfinite(v) for v in values):
                raise InputError(f"{path}: non-finite value at row {rownum}")
            rows.append(values)
    if not rows:
        raise InputError(f"{path}: no data rows")
    arr = np.asarray(rows)
    try:
        data = Dataset(y=arr[:, 0], x=arr[:, 1], z=arr[:, 2:])
    except UsageError as exc:
        raise InputError(f"{path}: {exc}")
    return data, z_names


def write_dataset_csv(path: str, data: Dataset):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "x"] + [f"z{j + 1}" for j in range(data.p)])
        for i in range(data.n):
            writer.writerow(
                [format(data.y[i], ".17g"), format(data.x[i], ".17g")]
                + [format(v, ".17g") for v in data.z[i]]
            )


def _emit(payload: dict, output_path: str | None):
    text = format_json(payload) + "\n"
    if output_path:
        with open(output_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _fit_block(data: Dataset, tau: float, config: RunConfig) -> tuple[dict, object]:
    settings = BrisqSettings(seed=config.seed)
    report, trace = backward_eliminate(data, tau, config.kmax, config.cn_rule, settings)
    theta = report.theta
    block = {
        "tau": tau,
        "k_hat": report.k_hat,
        "coefficients": {
            "alpha0": theta.params.alpha0,
            "alpha1": theta.params.alpha1,
            "betas": list(theta.params.betas),
            "gamma": list(theta.params.gamma),
        },
        "deltas": list(theta.params.deltas),
        "objective": theta.objective,
        "standard_errors": {
            "labels": report.covariance.labels,
            "values": list(report.standard_errors),
        },
        "sbic_trace": [
            {"k": e.k, "sbic": e.sbic, "objective": e.theta.objective} for e in trace.entries
        ],
        "iterations": theta.iterations,
        "converged": theta.converged,
        "restart_objectives": list(theta.restart_objectives),
    }
    return block, theta


def cmd_fit(config: RunConfig) -> dict:
    data, _ = read_dataset_csv(config.input_path)
    results = []
    thetas = []
    for tau in config.taus:
        block, theta = _fit_block(data, tau, config)
        results.append(block)
        thetas.append(theta)
    payload = {
        "kind": "fit",
        "input": config.input_path,
        "seed": config.seed,
        "kmax": config.kmax,
        "cn": config.cn_rule,
        "results": results,
    }
    if config.emit_curve:
        _write_curve(config.emit_curve, data, config.taus, thetas)
    return payload


def _write_curve(path: str, data: Dataset, taus, thetas, points: int = 200):
    grid = np.linspace(float(data.x.min()), float(data.x.max()), points)
    zbar = data.z.mean(axis=0) if data.p else None
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x"] + [f"q{tau:g}" for tau in taus])
        columns = [
            [predict_quantile(theta.params, xv, zbar) for xv in grid] for theta in thetas
        ]
        for i, xv in enumerate(grid):
            writer.writerow([format(xv, ".17g")] + [format(col[i], ".17g") for col in columns])


def cmd_test(config: RunConfig) -> dict:
    data, _ = read_dataset_csv(config.input_path)
    results = []
    for tau in config.taus:
        res = wild_bootstrap_pvalue(data, tau, b=config.bootstrap, seed=config.seed)
        results.append(
            {
                "tau": tau,
                "statistic": res.statistic,
                "p_value": res.p_value,
                "bootstrap": res.b,
                "argmax_delta": res.argmax_delta,
            }
        )
    return {"kind": "test", "input": config.input_path, "seed": config.seed, "results": results}


def cmd_ci(config: RunConfig) -> dict:
    data, _ = read_dataset_csv(config.input_path)
    bad = [m for m in config.methods if m not in ("wald", "boot", "score")]
    if bad:
        raise UsageError(f"unknown interval methods: {bad}; choose from wald, boot, score")
    results = []
    for tau in config.taus:
        settings = BrisqSettings(seed=config.seed)
        report, _ = backward_eliminate(data, tau, config.kmax, config.cn_rule, settings)
        theta = report.theta
        block = {"tau": tau, "k_hat": report.k_hat, "deltas": list(theta.params.deltas), "methods": {}}
        if report.k_hat == 0:
            results.append(block)
            continue
        for method in config.methods:
            t0 = time.perf_counter()
            if method == "wald":
                ivs = wald_ci(theta, report.covariance, config.level)
            elif method == "score":
                ivs = srs_invert_ci(data, tau, theta, config.level)
            else:
                ivs = bootstrap_ci(
                    data, tau, report.k_hat, b=config.bootstrap, level=config.level,
                    seed=config.seed, settings=settings, theta=theta,
                )
            elapsed = time.perf_counter() - t0
            block["methods"][method] = {
                "level": config.level,
                "intervals": [
                    {
                        "index": iv.index,
                        "lower": iv.lower,
                        "upper": iv.upper,
                        "truncated_lower": iv.truncated_lower,
                        "truncated_upper": iv.truncated_upper,
                    }
                    for iv in ivs.intervals
                ],
                "time_seconds": elapsed if config.timing else None,
            }
        results.append(block)
    return {
        "kind": "ci",
        "input": config.input_path,
        "seed": config.seed,
        "level": config.level,
        "results": results,
    }


def _scenario_from_fields(fields: dict) -> ScenarioSpec:
    try:
        return ScenarioSpec(
            case=fields.get("case", "1") if fields.get("case") == "custom" else int(fields.get("case", 1)),
            n=int(fields.get("n", 500)),
            error=fields.get("error", "normal"),
            heteroscedastic=str(fields.get("heteroscedastic", "false")).lower() in ("true", "1", "yes"),
            power_c=float(fields["power_c"]) if "power_c" in fields else None,
            seed=int(fields.get("seed", 0)),
        )
    except (ValueError, UsageError) as exc:
        raise InputError(f"invalid scenario: {exc}")


def cmd_simulate(config: RunConfig, scenario_path: str, output_dir: str | None, csv_path: str | None) -> dict:
    try:
        with open(scenario_path, encoding="utf-8") as fh:
            fields = parse_config(fh.read())
    except OSError as exc:
        raise InputError(f"cannot open scenario file: {exc}")
    except UsageError as exc:
        raise InputError(str(exc))
    study = fields.get("study", "selection")
    if "seed" not in fields:
        fields["seed"] = str(config.seed)
    spec = _scenario_from_fields(fields)
    taus = [float(v) for v in fields.get("tau", "0.5").split(",")]
    reps = int(fields.get("reps", 200))
    jobs = harness.resolve_jobs(config.jobs)

    if study == "dataset":
        data, _ = generate(spec)
        target = csv_path or (os.path.join(output_dir or ".", "dataset.csv"))
        write_dataset_csv(target, data)
        return {"kind": "simulate", "study": "dataset", "rows": data.n, "columns": 2 + data.p,
                "seed": spec.seed, "path": target}

    if study == "selection":
        cn = fields.get("cn", "log_n")
        summary = harness.run_selection_study(
            spec, tau=taus[0], cn_rule=cn, reps=reps, kmax=int(fields.get("kmax", 10)), jobs=jobs
        )
        rows = [["k_hat", "count"]] + [
            [k, c] for k, c in sorted(summary.to_dict()["k_hat_counts"].items())
        ]
    elif study == "estimation":
        summary = harness.run_estimation_study(spec, tau=taus[0], reps=reps, jobs=jobs)
        table = summary.table()
        rows = [["parameter", "bias", "sd", "se", "mse"]] + [
            [name, *(format(table[name][c], ".17g") for c in ("bias", "sd", "se", "mse"))]
            for name in summary.labels
        ]
    elif study == "coverage":
        methods = [m.strip() for m in fields.get("methods", "wald,score").split(",")]
        summary = harness.run_coverage_study(
            spec, tau=taus[0], level=float(fields.get("level", 0.95)),
            methods=methods, reps=reps, boot_b=int(fields.get("bootstrap", 200)), jobs=jobs,
        )
        rows = [["method", "kink", "coverage", "mean_length"]]
        for m in methods:
            for j, (cov, ln) in enumerate(zip(summary.coverage[m], summary.mean_length[m])):
                rows.append([m, j + 1, format(cov, ".17g"), format(ln, ".17g")])
    elif study == "power":
        c_values = [float(v) for v in fields.get("c_values", "0,2,4,6,8,10").split(",")]
        summary = harness.run_power_study(
            c_values, n=spec.n, tau=taus[0], error=spec.error,
            heteroscedastic=spec.heteroscedastic, b=int(fields.get("bootstrap", 300)),
            reps=reps, level=float(fields.get("level", 0.95)), seed=spec.seed, jobs=jobs,
        )
        rows = [["c", "rejection_rate"]] + [
            [format(c, ".17g"), format(r, ".17g")]
            for c, r in zip(summary.c_values, summary.rejection_rates)
        ]
    else:
        raise InputError(f"unknown study {study!r}; expected selection, estimation, coverage, power or dataset")

    out = summary.to_dict()
    if not config.timing:
        out.pop("seconds", None)
        if "methods" in out:
            for m in out["methods"].values():
                m.pop("mean_seconds", None)
    if csv_path:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(rows)
        out["csv"] = csv_path
    return {"kind": "simulate", **out}


def cmd_reproduce(config: RunConfig, full: bool, output_dir: str | None) -> dict:
    """Re-run the simulation-evidence battery; ``--full`` uses the complete grids."""
    jobs = harness.resolve_jobs(config.jobs)
    seed = config.seed
    reps_sel = 1000 if full else 200
    reps_est = 500 if full else 200
    reps_cov = 1000 if full else 200
    reps_pow = 1000 if full else 200
    taus = (0.3, 0.5, 0.7) if full else (0.5,)
    cases = (1, 2, 3)
    cn_rules = ("one", "loglog_n", "log_n") if full else ("one", "log_n")
    scales = (False, True) if full else (False, True)
    errors = ("normal", "t3") if full else ("normal",)

    studies = []
    for error in errors:
        for hetero in scales:
            for case in cases:
                for tau in taus:
                    for cn in cn_rules:
                        spec = ScenarioSpec(case=case, n=500, error=error,
                                            heteroscedastic=hetero, seed=seed)
                        s = harness.run_selection_study(
                            spec, tau=tau, cn_rule=cn, reps=reps_sel, jobs=jobs
                        )
                        studies.append(s.to_dict())
    for hetero in (False, True) if full else (False,):
        spec = ScenarioSpec(case=1, n=500, error="normal", heteroscedastic=hetero, seed=seed + 1)
        studies.append(harness.run_estimation_study(spec, tau=0.5, reps=reps_est, jobs=jobs).to_dict())
    cov_spec = ScenarioSpec(case=2, n=500, error="t3", heteroscedastic=True, seed=seed + 2)
    cov_methods = ("wald", "boot", "score") if full else ("wald", "score")
    for tau in (0.3, 0.5, 0.8) if full else (0.5,):
        studies.append(
            harness.run_coverage_study(
                cov_spec, tau=tau, level=0.95, methods=cov_methods, reps=reps_cov, jobs=jobs
            ).to_dict()
        )
    studies.append(
        harness.run_power_study(
            [0, 2, 4, 6, 8, 10], n=1000, tau=0.5, b=300, reps=reps_pow,
            seed=seed + 3, jobs=jobs,
        ).to_dict()
    )
    if not config.timing:
        for s in studies:
            s.pop("seconds", None)
            for m in s.get("methods", {}).values():
                m.pop("mean_seconds", None)
    payload = {"kind": "reproduce", "full": full, "seed": seed, "studies": studies}
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
        with open(os.path.join(output_dir, "reproduce.json"), "w", encoding="utf-8") as fh:
            fh.write(format_json(payload) + "\n")
    return payload


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="kinkqr", description="Multi-kink quantile regression toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        if needs_input:
            p.add_argument("--input", "-i", required=True, help="input CSV with header y,x[,z1..zp]")
        p.add_argument("--tau", action="append", type=float, default=None,
                       help="quantile level; repeat for several (default 0.5)")
        p.add_argument("--seed", type=int, default=None,
                       help=f"RNG seed (default ${SEED_ENV_VAR} or 0)")
        p.add_argument("--output", "-o", default=None, help="write JSON here instead of stdout")

    p_fit = sub.add_parser("fit", help="select the kink count and estimate the model")
    common(p_fit)
    p_fit.add_argument("--kmax", type=int, default=10, help="initial kink count (default 10)")
    p_fit.add_argument("--cn", default="log_n", choices=["one", "loglog_n", "log_n"],
                       help="penalty growth rule for the selection criterion")
    p_fit.add_argument("--emit-curve", default=None, metavar="CSV",
                       help="write fitted quantile curves (at mean covariates) to this CSV")

    p_test = sub.add_parser("test", help="test for the existence of kink effects")
    common(p_test)
    p_test.add_argument("--bootstrap", "-B", type=int, default=300,
                        help="wild-bootstrap replicates (default 300)")

    p_ci = sub.add_parser("ci", help="confidence intervals for kink locations")
    common(p_ci)
    p_ci.add_argument("--method", action="append", default=None,
                      choices=["wald", "boot", "score"],
                      help="interval method; repeat for several (default wald)")
    p_ci.add_argument("--level", type=float, default=0.95, help="confidence level (default 0.95)")
    p_ci.add_argument("--kmax", type=int, default=10)
    p_ci.add_argument("--cn", default="log_n", choices=["one", "loglog_n", "log_n"])
    p_ci.add_argument("--bootstrap", "-B", type=int, default=200,
                      help="bootstrap replicates for --method boot")
    p_ci.add_argument("--timing", action="store_true", help="include wall-clock timings in the JSON")

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo study from a scenario config")
    p_sim.add_argument("--scenario", required=True, help="key = value scenario file")
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--output", "-o", default=None)
    p_sim.add_argument("--csv", default=None, help="also write the summary table as CSV here")
    p_sim.add_argument("--output-dir", default=None, help="directory for dataset emission")
    p_sim.add_argument("--jobs", type=int, default=1,
                       help="parallel workers for replicates (0 = all cores)")
    p_sim.add_argument("--timing", action="store_true", help="include wall-clock timings in outputs")

    p_rep = sub.add_parser("reproduce", help="re-run the simulation-evidence battery")
    p_rep.add_argument("--full", action="store_true",
                       help="complete grids (1000 reps, all cases, all quantile levels); slow")
    p_rep.add_argument("--seed", type=int, default=None)
    p_rep.add_argument("--output", "-o", default=None)
    p_rep.add_argument("--output-dir", default=None, help="also write reproduce.json here")
    p_rep.add_argument("--jobs", type=int, default=0,
                       help="parallel workers for replicates (0 = all cores, default)")
    p_rep.add_argument("--timing", action="store_true")
    return parser


def _default_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env else 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = RunConfig(
            command=args.command,
            input_path=getattr(args, "input", None),
            taus=args.tau if getattr(args, "tau", None) else [0.5],
            kmax=getattr(args, "kmax", 10),
            cn_rule=getattr(args, "cn", "log_n"),
            bootstrap=getattr(args, "bootstrap", 300),
            methods=getattr(args, "method", None) or ["wald"],
            level=getattr(args, "level", 0.95),
            seed=_default_seed(args.seed),
            output_path=args.output,
            emit_curve=getattr(args, "emit_curve", None),
            timing=getattr(args, "timing", False),
            jobs=getattr(args, "jobs", 1),
        )
        if args.command == "fit":
            payload = cmd_fit(config)
        elif args.command == "test":
            payload = cmd_test(config)
        elif args.command == "ci":
            payload = cmd_ci(config)
        elif args.command == "simulate":
            payload = cmd_simulate(config, args.scenario, args.output_dir, args.csv)
        elif args.command == "reproduce":
            payload = cmd_reproduce(config, args.full, args.output_dir)
        else:  # pragma: no cover - argparse enforces the choices
            raise UsageError(f"unknown command {args.command!r}")
        _emit(payload, config.output_path)
        return EXIT_OK
    except InputError as exc:
        print(f"kinkqr: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (RankError, ConvergenceError, BandwidthError, DegenerateBootstrapError) as exc:
        print(f"kinkqr: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except UsageError as exc:
        print(f"kinkqr: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
