"""Experiment drivers, metrics, the verification suite and the CLI."""

from .experiments import (ExperimentConfig, RunRecord, Task, figure_bands, read_jsonl, run_logistic_bench,
                          run_poisson_sim, summarize, write_outputs)
from .metrics import RiskSummary, classification_metrics, out_of_sample_divergence, risk_summaries
from .verify import CheckResult, VerifyReport, run_verify

__all__ = [
    "CheckResult",
    "ExperimentConfig",
    "RiskSummary",
    "RunRecord",
    "Task",
    "VerifyReport",
    "classification_metrics",
    "figure_bands",
    "out_of_sample_divergence",
    "read_jsonl",
    "risk_summaries",
    "run_logistic_bench",
    "run_poisson_sim",
    "run_verify",
    "summarize",
    "write_outputs",
]
