"""Estimators: MLE, penalised MLE, worst-case inner problems and the robust fit."""

from .dro import (
    CompositeObjective,
    DroProblem,
    DroSolution,
    SolverReport,
    SurrogateBound,
    dro_gradient,
    dro_objective,
    kl_dro_objective,
    nominal_expected_loss,
    solve_dro,
    solve_kl_dro_nonparametric,
    solve_kl_dro_report,
    surrogate_bound,
)
from .inner import ConditionalBounds, conditional_bounds, conditional_losses, inner_worst_case
from .mle import Penalty, fit_mle, fit_mle_report, fit_penalized_mle
from .optim import SmoothConvexConfig
from .support import SupportResult, support_core, support_function

__all__ = [
    "CompositeObjective",
    "ConditionalBounds",
    "DroProblem",
    "DroSolution",
    "Penalty",
    "SmoothConvexConfig",
    "SolverReport",
    "SupportResult",
    "SurrogateBound",
    "conditional_bounds",
    "conditional_losses",
    "dro_gradient",
    "dro_objective",
    "fit_mle",
    "fit_mle_report",
    "fit_penalized_mle",
    "inner_worst_case",
    "kl_dro_objective",
    "nominal_expected_loss",
    "solve_dro",
    "solve_kl_dro_nonparametric",
    "solve_kl_dro_report",
    "support_core",
    "support_function",
    "surrogate_bound",
]
