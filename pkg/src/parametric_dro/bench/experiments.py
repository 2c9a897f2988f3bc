"""Simulated Poisson and CSV logistic benchmark drivers.

Each run draws its own RNG stream from ``(seed, N, run)`` so results do not
depend on how runs are distributed over worker processes.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..dataio import (CsvSchema, Dataset, TrueModel, add_intercept, group, load_csv, make_true_model,
                      sample_dataset, split, standardize)
from ..errors import (ConfigError, ConvergenceError, NotConvergedWarning, ParametricDROError, RootFindingError,
                      UnboundedMLEWarning, UndefinedMetricError)
from ..expfam import ExpFamilySpec, FamilyId
from ..nominal import AmbiguityRadii, build_mle_fit
from ..solver import DroProblem, fit_mle_report, fit_penalized_mle, solve_dro
from ..solver.dro import solve_kl_dro_report
from .metrics import classification_metrics, mean_log_loss, out_of_sample_divergence, risk_summaries

SELECTION_NOTE = {
    "poisson-sim": "hyperparameters chosen by the out-of-sample divergence under the true model",
    "logistic-bench": "hyperparameters chosen by mean log-loss on the validation split",
}


class Task(str, enum.Enum):
    POISSON_SIM = "poisson-sim"
    LOGISTIC_BENCH = "logistic-bench"
    VERIFY = "verify"


def _logspace(lo: float, hi: float, k: int) -> tuple:
    return tuple(float(v) for v in np.logspace(np.log10(lo), np.log10(hi), k))


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for one benchmark invocation.

    Parameters
    ----------
    task : Task
    sizes : tuple of int
        Training sample sizes N (Poisson simulation only).
    runs : int
        Independent repetitions per size.
    support_size, dim : int
        Number of covariate support points K and covariate dimension n.
    a_grid : tuple of float
        Conditional radius rates, rho_c = a / N_c.
    eps_rule : str
        ``"grid"``: epsilon on a log grid of ``eps_points`` values from
        sum(p_hat * rho) to ``eps_max``; ``"multiple"``: epsilon =
        ``kappa * sum(p_hat * rho)``.
    penalty_grid : tuple of float
        Weights for the L1 and L2 baselines.
    kl_eps_grid : tuple of float
        Radii for the nonparametric KL baseline.
    methods : tuple of str
        Subset of DRO, KL, MLE, L1, L2.
    dataset, schema : optional
        CSV path and :class:`CsvSchema` fields (logistic benchmark).
    tolerances, checks : optional
        Overrides for the verification suite.
    """

    task: Task = Task.POISSON_SIM
    sizes: tuple = (50,)
    runs: int = 20
    support_size: int = 20
    dim: int = 5
    a_grid: tuple = _logspace(1e-4, 1.0, 20)
    eps_rule: str = "grid"
    eps_points: int = 20
    eps_max: float = 1.0
    kappa: float = 2.0
    penalty_grid: tuple = _logspace(1e-4, 1.0, 20)
    kl_eps_grid: tuple = _logspace(1e-4, 10.0, 10)
    methods: tuple = ("DRO", "MLE", "L1", "L2")
    seed: int = 0
    dataset: str | None = None
    schema: dict | None = None
    standardize: bool = False
    intercept: bool = False
    out: str | None = None
    threads: int = 1
    tolerances: dict = field(default_factory=dict)
    checks: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        for name in ("sizes", "a_grid", "penalty_grid", "kl_eps_grid", "methods"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.checks is not None:
            object.__setattr__(self, "checks", tuple(self.checks))
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if not self.sizes or any(int(n) < 1 for n in self.sizes):
            raise ConfigError("sizes must be a nonempty list of positive integers")
        for name in ("a_grid", "penalty_grid", "kl_eps_grid"):
            grid = np.asarray(getattr(self, name), dtype=float)
            if grid.size == 0 or not np.all(np.isfinite(grid)) or np.any(grid < 0):
                raise ConfigError(f"{name} must be a nonempty list of finite non-negative values")
        unknown = set(self.methods) - {"DRO", "KL", "MLE", "L1", "L2"}
        if not self.methods or unknown:
            raise ConfigError(f"methods must be a nonempty subset of DRO, KL, MLE, L1, L2 (got {sorted(unknown)})")
        if self.eps_rule not in ("grid", "multiple"):
            raise ConfigError("eps_rule must be 'grid' or 'multiple'")
        if self.eps_points < 1 or not self.eps_max >= 0:
            raise ConfigError("need eps_points >= 1 and eps_max >= 0")
        if not self.kappa >= 1:
            raise ConfigError("kappa must be >= 1")
        if self.support_size < 1 or self.dim < 1:
            raise ConfigError("support_size and dim must be >= 1")

    @classmethod
    def defaults(cls, task: Task | str) -> "ExperimentConfig":
        task = Task(task)
        if task is Task.LOGISTIC_BENCH:
            return cls(task=task, runs=10, a_grid=_logspace(1e-4, 10.0, 10), eps_rule="multiple",
                       penalty_grid=_logspace(1e-4, 1.0, 10), methods=("DRO", "KL", "MLE", "L1", "L2"))
        return cls(task=task)

    @classmethod
    def from_dict(cls, data: dict, task: Task | str | None = None) -> "ExperimentConfig":
        """Overlay ``data`` on the defaults of its task."""
        if not isinstance(data, dict) or not data:
            raise ConfigError("config must be a nonempty JSON object")
        data = dict(data)
        task = data.pop("task", None) or task
        if task is None:
            raise ConfigError("config does not name a task")
        try:
            task = Task(task)
        except ValueError:
            raise ConfigError(f"unknown task {task!r}") from None
        names = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return replace(cls.defaults(task), **data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config: {exc}") from None

    @classmethod
    def from_json(cls, path, task: Task | str | None = None) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text() or "null")
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data, task)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task"] = self.task.value
        return d


@dataclass(frozen=True)
class RunRecord:
    """One method's outcome in one run.

    ``status`` is ``"ok"`` or ``"failed"``; failed records carry the reason in
    ``note`` and are excluded from summaries.  ``curve`` holds
    ``(a, metric)`` pairs at epsilon = ``eps_max`` (Poisson DRO only).
    """

    method: str
    run: int
    size: int
    seed: int
    status: str = "ok"
    hyperparameters: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    timestamp: float = 0.0
    note: str = ""
    curve: tuple = ()

    def __post_init__(self):
        if self.status == "ok" and not all(np.isfinite(v) for v in self.metrics.values()):
            raise ParametricDROError(f"{self.method} run {self.run}: non-finite metric {self.metrics}")

    def to_dict(self) -> dict:
        """JSON-ready dict; wall clock and timestamp sit under ``timing``."""
        d = asdict(self)
        d["timing"] = {"wall_clock": d.pop("wall_clock"), "timestamp": d.pop("timestamp")}
        d["curve"] = [list(p) for p in self.curve]
        return d


# Poisson simulation


def _failed(methods, run: int, size: int, seed: int, note: str) -> list:
    return [RunRecord(m, run, size, seed, status="failed", note=note, timestamp=time.time()) for m in methods]


def _eps_values(cfg: ExperimentConfig, base: float) -> list:
    if cfg.eps_rule == "multiple":
        return [cfg.kappa * base]
    if cfg.eps_points == 1 or base >= cfg.eps_max:
        return [max(cfg.eps_max, base)]
    if base <= 0:
        return [0.0, *_logspace(cfg.eps_max * 1e-4, cfg.eps_max, cfg.eps_points - 1)]
    vals = list(_logspace(base, cfg.eps_max, cfg.eps_points))
    vals[0] = base
    return vals


def _grid_search(fit, grid, score):
    """Fit over ``grid`` and keep the lowest score.  Returns (value, w, score, failures)."""
    best = (None, None, np.inf)
    failures = 0
    w_prev = None
    for g in grid:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", NotConvergedWarning)
                w = fit(g, w_prev)
        except (NotConvergedWarning, ConvergenceError, RootFindingError):
            failures += 1
            continue
        s = score(w)
        if s < best[2]:
            best = (g, w, s)
        w_prev = w
    return best[0], best[1], best[2], failures


def _penalty_fit(spec: ExpFamilySpec, data, penalty: str):
    def fit(weight, w0):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnboundedMLEWarning)
            return fit_penalized_mle(spec, data, penalty=penalty, weight=weight, w0=w0)

    return fit


def poisson_run(cfg: ExperimentConfig, model: TrueModel, size: int, run: int) -> list:
    """All configured methods on one simulated training sample."""
    spec = ExpFamilySpec(FamilyId.POISSON)
    rng = np.random.default_rng([cfg.seed, size, run])
    data = sample_dataset(model, size, rng)
    grouped = group(data)
    score = lambda w: out_of_sample_divergence(model, w)
    records = []

    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnboundedMLEWarning)
        mle = fit_mle_report(spec, grouped)
    if mle.status != "converged":
        return _failed(cfg.methods, run, size, cfg.seed, f"no finite MLE ({mle.status})")
    w_mle = mle.x
    t_mle = time.perf_counter() - t0

    for method in cfg.methods:
        t0 = time.perf_counter()
        hyper, extra, curve = {}, {}, ()
        if method == "MLE":
            w, div = w_mle, score(w_mle)
            elapsed = t_mle
        elif method in ("L1", "L2"):
            weight, w, div, fails = _grid_search(_penalty_fit(spec, grouped, method.lower()), cfg.penalty_grid, score)
            hyper = {"weight": weight}
            extra = {"grid_failures": fails}
        elif method == "DRO":
            hyper, w, div, fails, curve = _dro_poisson(cfg, spec, grouped, w_mle, score)
            extra = {"grid_failures": fails}
        else:  # KL
            eps, w, div, fails = _grid_search(
                lambda e, w0: solve_kl_dro_report(spec, data, epsilon=e, warm_start=w_mle if w0 is None else w0).w_star,
                cfg.kl_eps_grid, score)
            hyper = {"epsilon": eps}
            extra = {"grid_failures": fails}
        if method != "MLE":
            elapsed = time.perf_counter() - t0
        if w is None:
            records.append(RunRecord(method, run, size, cfg.seed, status="failed", note="every grid point failed",
                                     wall_clock=elapsed, timestamp=time.time()))
            continue
        records.append(RunRecord(method, run, size, cfg.seed, hyperparameters=hyper,
                                 metrics={"divergence": float(div), **extra}, wall_clock=elapsed,
                                 timestamp=time.time(), curve=curve))
    return records


def _dro_poisson(cfg: ExperimentConfig, spec: ExpFamilySpec, grouped, w_mle, score):
    nominal = build_mle_fit(grouped, w_mle)
    best = ({}, None, np.inf)
    fails = 0
    curve = []
    for a in cfg.a_grid:
        rho = a / grouped.counts
        base = float(grouped.p_hat @ rho)
        last = np.nan
        for eps in _eps_values(cfg, base):
            problem = DroProblem(spec, nominal, AmbiguityRadii(eps, rho))
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("error", NotConvergedWarning)
                    w = solve_dro(problem, warm_start=w_mle).w_star
            except (NotConvergedWarning, ConvergenceError, RootFindingError):
                fails += 1
                last = np.nan
                continue
            s = score(w)
            last = s
            if s < best[2]:
                best = ({"a": float(a), "epsilon": float(eps)}, w, s)
        if cfg.eps_rule == "grid" and np.isfinite(last):
            curve.append((float(a), float(last)))
    return best[0], best[1], best[2], fails, tuple(curve)


def _poisson_job(args):
    cfg, model, size, run = args
    return poisson_run(cfg, model, size, run)


def true_model_for(cfg: ExperimentConfig) -> TrueModel:
    """The data-generating law shared by every run of a simulation."""
    return make_true_model(cfg.support_size, cfg.dim, np.random.default_rng([cfg.seed]))


def _execute(job, tasks, threads: int) -> list:
    if threads == 1:
        out = [job(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(job, tasks))
    return [r for recs in out for r in recs]


def run_poisson_sim(config: ExperimentConfig) -> list:
    """Simulated Poisson regression study; returns one record per (size, run, method)."""
    if config.task is not Task.POISSON_SIM:
        raise ConfigError("run_poisson_sim needs task poisson-sim")
    model = true_model_for(config)
    tasks = [(config, model, int(n), r) for n in config.sizes for r in range(config.runs)]
    return _execute(_poisson_job, tasks, config.threads)


# Logistic benchmark


def _load_for_bench(cfg: ExperimentConfig) -> Dataset:
    if not cfg.dataset:
        raise ConfigError("logistic-bench needs a dataset path")
    schema = CsvSchema.from_json(cfg.schema or {"label": "label"})
    data = load_csv(cfg.dataset, schema)
    if data.family_id is not FamilyId.BERNOULLI:
        raise ConfigError("logistic-bench needs a Bernoulli label column")
    return data


def _prepare_split(cfg: ExperimentConfig, data: Dataset, run: int):
    split_seed = int(np.random.default_rng([cfg.seed, run]).integers(2**31 - 1))
    parts = split(data, (0.5, 0.25, 0.25), seed=split_seed)
    if cfg.standardize:
        parts = standardize(*parts)
    if cfg.intercept:
        parts = tuple(add_intercept(p) for p in parts)
    return parts


def logistic_run(cfg: ExperimentConfig, data: Dataset, run: int) -> list:
    """All configured methods on one train/validation/test split."""
    spec = data.family
    size = data.n_samples
    train, val, test = _prepare_split(cfg, data, run)
    if np.unique(test.t_y).size < 2:
        return _failed(cfg.methods, run, size, cfg.seed, "test split has one class (AUC undefined)")
    if np.unique(train.t_y).size < 2:
        return _failed(cfg.methods, run, size, cfg.seed, "train split has one class")
    vloss = lambda w: mean_log_loss(spec, val.x, val.t_y, w)
    grouped = group(train)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnboundedMLEWarning)
        mle = fit_mle_report(spec, train)
    bounded = mle.status == "converged"
    if bounded:
        w_nom, nominal_note = mle.x, "mle"
    else:
        weight = float(min(cfg.penalty_grid))
        w_nom = _penalty_fit(spec, train, "l2")(weight, None)
        nominal_note = f"l2:{weight:g}"

    records = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        hyper = {}
        note = ""
        fails = 0
        if method == "MLE":
            w = mle.x
            note = "" if bounded else f"likelihood unbounded ({mle.status}); last iterate"
        elif method in ("L1", "L2"):
            weight, w, _, fails = _grid_search(_penalty_fit(spec, train, method.lower()), cfg.penalty_grid, vloss)
            hyper = {"weight": weight}
        elif method == "KL":
            eps, w, _, fails = _grid_search(
                lambda e, w0: solve_kl_dro_report(spec, train, epsilon=e, warm_start=w_nom if w0 is None else w0).w_star,
                cfg.kl_eps_grid, vloss)
            hyper = {"epsilon": eps}
        else:
            nominal = build_mle_fit(grouped, w_nom)

            def fit(a, w0):
                rho = a / grouped.counts
                eps = _eps_values(cfg, float(grouped.p_hat @ rho))[-1]
                problem = DroProblem(spec, nominal, AmbiguityRadii(eps, rho))
                return solve_dro(problem, warm_start=w_nom).w_star

            a, w, _, fails = _grid_search(fit, cfg.a_grid, vloss)
            hyper = {"a": a, "nominal": nominal_note}
        elapsed = time.perf_counter() - t0
        if w is None:
            records.append(RunRecord(method, run, size, cfg.seed, status="failed", note="every grid point failed",
                                     wall_clock=elapsed, timestamp=time.time()))
            continue
        scores = spec.grad(test.x @ w)
        try:
            auc, ccr = classification_metrics(scores, test.t_y)
        except UndefinedMetricError as exc:
            records.append(RunRecord(method, run, size, cfg.seed, status="failed", note=str(exc),
                                     wall_clock=elapsed, timestamp=time.time()))
            continue
        metrics = {"val_logloss": vloss(w), "test_logloss": mean_log_loss(spec, test.x, test.t_y, w),
                   "test_auc": auc, "test_ccr": ccr}
        if method != "MLE":
            metrics["grid_failures"] = fails
        records.append(RunRecord(method, run, size, cfg.seed, hyperparameters=hyper, metrics=metrics,
                                 wall_clock=elapsed, timestamp=time.time(), note=note))
    return records


def _logistic_job(args):
    cfg, data, run = args
    return logistic_run(cfg, data, run)


def run_logistic_bench(config: ExperimentConfig, data: Dataset | None = None) -> list:
    """Repeated 50/25/25 splits of a CSV dataset; returns one record per (run, method)."""
    if config.task is not Task.LOGISTIC_BENCH:
        raise ConfigError("run_logistic_bench needs task logistic-bench")
    data = _load_for_bench(config) if data is None else data
    tasks = [(config, data, r) for r in range(config.runs)]
    return _execute(_logistic_job, tasks, config.threads)


# Summaries and persistence

PRIMARY_METRICS = {
    Task.POISSON_SIM: ("divergence",),
    Task.LOGISTIC_BENCH: ("test_auc", "test_ccr", "test_logloss"),
}
LOWER_IS_BETTER = {"divergence": True, "test_logloss": True, "test_auc": False, "test_ccr": False}


def summarize(records, task: Task | str, level: float = 0.05) -> list:
    """Per (size, method, metric) rows plus paired relative differences of DRO.

    Each row has keys size, method, metric, n_ok, n_failed, mean,
    ci95_halfwidth, cvar.  CVaR is taken over the worse tail (largest values
    for losses, negated back for scores).  Relative rows use method
    ``DRO_vs_<X>`` and metric ``100*(DRO-X)/X`` computed per run.
    """
    task = Task(task)
    rows = []
    sizes = sorted({r.size for r in records})
    methods = list(dict.fromkeys(r.method for r in records))
    for size in sizes:
        recs = [r for r in records if r.size == size]
        for metric in PRIMARY_METRICS[task]:
            sign = 1.0 if LOWER_IS_BETTER[metric] else -1.0
            by_method = {}
            for m in methods:
                ok = [r for r in recs if r.method == m and r.status == "ok"]
                failed = sum(1 for r in recs if r.method == m and r.status != "ok")
                by_method[m] = {r.run: r.metrics[metric] for r in ok}
                rows.append(_summary_row(size, m, metric, list(by_method[m].values()), failed, sign, level))
            if "DRO" in by_method:
                for m in methods:
                    if m == "DRO":
                        continue
                    runs = sorted(set(by_method["DRO"]) & set(by_method[m]))
                    rel = [100.0 * (by_method["DRO"][k] - by_method[m][k]) / by_method[m][k]
                           for k in runs if by_method[m][k] != 0]
                    n_runs = len({r.run for r in recs})
                    rows.append(_summary_row(size, f"DRO_vs_{m}", f"100*(DRO-{m})/{m}:{metric}", rel,
                                             n_runs - len(rel), sign, level))
    return rows


def _summary_row(size, method, metric, values, failed, sign, level) -> dict:
    row = {"size": size, "method": method, "metric": metric, "n_ok": len(values), "n_failed": failed,
           "mean": math.nan, "ci95_halfwidth": math.nan, "cvar": math.nan}
    if len(values) >= 2:
        s = risk_summaries(sign * np.asarray(values), level)
        row.update(mean=sign * s.mean, ci95_halfwidth=s.ci95_halfwidth, cvar=sign * s.cvar)
    elif len(values) == 1:
        row.update(mean=float(values[0]))
    return row


def figure_bands(records) -> list:
    """Rows (size, a, p10, p50, p90) of the DRO curves at epsilon = eps_max."""
    rows = []
    for size in sorted({r.size for r in records}):
        curves = [dict(r.curve) for r in records if r.size == size and r.method == "DRO" and r.status == "ok"]
        for a in sorted({a for c in curves for a in c}):
            vals = np.array([c[a] for c in curves if a in c])
            p10, p50, p90 = np.percentile(vals, [10, 50, 90])
            rows.append({"size": size, "a": a, "p10": float(p10), "p50": float(p50), "p90": float(p90)})
    return rows


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_jsonl(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            d = json.loads(line)
            timing = d.pop("timing")
            d["curve"] = tuple(tuple(p) for p in d["curve"])
            out.append(RunRecord(**d, wall_clock=timing["wall_clock"], timestamp=timing["timestamp"]))
    return out


def write_csv(rows, path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def write_outputs(config: ExperimentConfig, records, out_dir) -> dict:
    """records.jsonl, summary.csv, metadata.json and (Poisson) figure1.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"records": out / "records.jsonl", "summary": out / "summary.csv", "metadata": out / "metadata.json"}
    write_jsonl(records, paths["records"])
    write_csv(summarize(records, config.task), paths["summary"])
    if config.task is Task.POISSON_SIM:
        paths["figure"] = out / "figure1.csv"
        write_csv(figure_bands(records), paths["figure"])
    failed = sum(1 for r in records if r.status != "ok")
    meta = {"config": config.to_dict(), "selection": SELECTION_NOTE.get(config.task.value, ""),
            "n_records": len(records), "n_failed": failed}
    paths["metadata"].write_text(json.dumps(meta, indent=2, sort_keys=True))
    return {k: str(v) for k, v in paths.items()}
