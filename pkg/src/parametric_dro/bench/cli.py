"""Command-line entry point.

Exit codes: 0 success, 1 usage, 2 data error, 3 solver failure,
4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from ..dataio import CsvSchema, add_intercept, group, load_csv, standardize
from ..errors import (BoundaryMeanError, ConfigError, ConvergenceError, DataLoadError, InvalidInputError,
                      NotConvergedWarning, RadiiInfeasibleError, RootFindingError, SchemaError,
                      UnboundedMLEWarning)
from ..nominal import Construction, Multiple
from ..solver import DroProblem, fit_mle_report, solve_dro
from ..worstcase import assemble
from .experiments import ExperimentConfig, Task, run_logistic_bench, run_poisson_sim, summarize, write_outputs
from .verify import run_verify

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="worker processes")


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--label", help="label column (when no schema is given)")
    p.add_argument("--schema", help="JSON schema file for the CSV")
    p.add_argument("--standardize", action="store_true", default=None, help="z-score features with train statistics")
    p.add_argument("--intercept", action="store_true", default=None, help="prepend a constant feature")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="parametric-dro", description="Robust GLM estimation benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("poisson-sim", help="simulated Poisson regression study")
    _common(p)

    p = sub.add_parser("logistic-bench", help="repeated-split logistic benchmark on a CSV")
    _common(p)
    _data_flags(p)
    p.add_argument("csv", nargs="?", help="dataset path (or 'dataset' in the config)")

    p = sub.add_parser("verify", help="run the oracle verification suite")
    _common(p)

    p = sub.add_parser("worst-case", help="fit the robust model on a CSV and export the adversary")
    _common(p)
    _data_flags(p)
    p.add_argument("csv", help="dataset path")
    p.add_argument("--a", type=float, default=0.1, help="conditional radius rate, rho_c = a / N_c")
    p.add_argument("--kappa", type=float, default=2.0, help="epsilon = kappa * sum(p_hat * rho)")
    p.add_argument("--construction", choices=[c.value for c in Construction], default="mle_fit")
    return parser


def _config(args, task: Task) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config, task) if args.config else ExperimentConfig.defaults(task)
    if cfg.task is not task:
        raise ConfigError(f"config task {cfg.task.value!r} does not match subcommand {task.value!r}")
    updates = {}
    for name in ("out", "seed", "threads", "standardize", "intercept"):
        v = getattr(args, name, None)
        if v is not None:
            updates[name] = v
    if getattr(args, "csv", None):
        updates["dataset"] = args.csv
    schema = _schema_dict(args)
    if schema is not None:
        updates["schema"] = schema
    return replace(cfg, **updates) if updates else cfg


def _schema_dict(args):
    if getattr(args, "schema", None):
        try:
            return json.loads(Path(args.schema).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaError(f"cannot read schema {args.schema}: {exc}") from None
    if getattr(args, "label", None):
        return {"label": args.label}
    return None


def _print_summary(records, task: Task) -> None:
    for row in summarize(records, task):
        print(f"N={row['size']} {row['method']:>10} {row['metric']}: mean={row['mean']:.6g} "
              f"+/-{row['ci95_halfwidth']:.3g} cvar={row['cvar']:.6g} (ok={row['n_ok']}, failed={row['n_failed']})")


def _run(args) -> int:
    if args.command == "verify":
        cfg = _config(args, Task.VERIFY)
        report = run_verify(cfg)
        for line in report.lines():
            print(line)
        if cfg.out:
            Path(cfg.out).mkdir(parents=True, exist_ok=True)
            (Path(cfg.out) / "verify.txt").write_text("\n".join(report.lines()) + "\n")
        return EXIT_OK if report.passed else EXIT_VERIFY

    if args.command == "worst-case":
        return _worst_case(args)

    task = Task(args.command)
    cfg = _config(args, task)
    records = run_poisson_sim(cfg) if task is Task.POISSON_SIM else run_logistic_bench(cfg)
    _print_summary(records, task)
    if cfg.out:
        paths = write_outputs(cfg, records, cfg.out)
        print(f"wrote {', '.join(paths.values())}")
    return EXIT_OK


def _worst_case(args) -> int:
    cfg = _config(args, Task.LOGISTIC_BENCH)
    schema = CsvSchema.from_json(cfg.schema or {"label": "label"})
    data = load_csv(args.csv, schema)
    if cfg.standardize:
        (data,) = standardize(data)
    if cfg.intercept:
        data = add_intercept(data)
    grouped = group(data)
    w_mle = None
    if Construction(args.construction) is Construction.MLE_FIT:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnboundedMLEWarning)
            fit = fit_mle_report(grouped.family, grouped)
        if fit.status != "converged":
            raise InvalidInputError(f"maximum likelihood estimate does not exist ({fit.status}); "
                                    "try --construction moment_match")
        w_mle = fit.x
    problem = DroProblem.from_grouped(grouped, args.a, Multiple(args.kappa), construction=args.construction,
                                      w_mle=w_mle)
    with warnings.catch_warnings():
        warnings.simplefilter("error", NotConvergedWarning)
        sol = solve_dro(problem)
    text = assemble(problem, sol.w_star).to_json(indent=2)
    if cfg.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        path = Path(cfg.out) / "worst_case.json"
        path.write_text(text + "\n")
        print(f"wrote {path}")
    else:
        print(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataLoadError, SchemaError, BoundaryMeanError, RadiiInfeasibleError, InvalidInputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, RootFindingError, NotConvergedWarning) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
