"""Evaluation metrics for the benchmark drivers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ..dataio import TrueModel
from ..errors import InvalidInputError, UndefinedMetricError

Z95 = 1.96


def out_of_sample_divergence(true_model: TrueModel, w_star) -> float:
    """E_{P_X}[KL(P_{Y|X} || Q_{w*,Y|X})] for the Poisson design.

    Per support point the summand is exp(w0.x)((w0 - w*).x - 1) + exp(w*.x).
    """
    w_star = np.asarray(w_star, dtype=float)
    if w_star.shape != true_model.w0.shape:
        raise InvalidInputError(f"w_star must have shape {true_model.w0.shape}")
    lam0 = true_model.support @ true_model.w0
    lam = true_model.support @ w_star
    terms = np.exp(lam0) * (lam0 - lam - 1.0) + np.exp(lam)
    return float(max(true_model.p @ terms, 0.0))


def classification_metrics(scores, labels, threshold: float = 0.5) -> tuple[float, float]:
    """(AUC, CCR) for predicted probabilities.

    AUC is the Mann-Whitney statistic with ties counted 1/2.  CCR predicts
    the positive class when ``score >= threshold``.

    Raises
    ------
    UndefinedMetricError
        If ``labels`` contain a single class.
    """
    s = np.asarray(scores, dtype=float).reshape(-1)
    y = np.asarray(labels, dtype=float).reshape(-1)
    if s.shape != y.shape or s.size == 0:
        raise InvalidInputError("scores and labels must be nonempty and of equal length")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise InvalidInputError("labels must be 0/1")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC is undefined when the labels contain one class")
    ranks = rankdata(s)
    auc = (ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    ccr = float(np.mean((s >= threshold) == (y == 1)))
    return float(auc), ccr


@dataclass(frozen=True)
class RiskSummary:
    """Iterates as ``(mean, ci95_halfwidth, cvar)``."""

    mean: float
    ci95_halfwidth: float
    cvar: float

    def __iter__(self):
        return iter((self.mean, self.ci95_halfwidth, self.cvar))


def risk_summaries(values, level: float = 0.05) -> RiskSummary:
    """Mean, normal-approximation 95% half-width and upper-tail CVaR.

    CVaR is the mean of the ``ceil(level * runs)`` largest values.
    """
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size < 2:
        raise InvalidInputError("need at least two runs")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("values must be finite")
    if not 0 < level <= 1:
        raise InvalidInputError("level must be in (0, 1]")
    half = Z95 * float(v.std(ddof=1)) / math.sqrt(v.size)
    k = max(1, math.ceil(level * v.size - 1e-9))
    cvar = float(np.sort(v)[-k:].mean())
    return RiskSummary(float(v.mean()), half, cvar)


def mean_log_loss(spec, x, t_y, w) -> float:
    """Average negative log-likelihood (without base measure) of a GLM."""
    lam = np.asarray(x, dtype=float) @ np.asarray(w, dtype=float)
    return float(np.mean(spec.psi(lam) - lam * np.asarray(t_y, dtype=float)))
