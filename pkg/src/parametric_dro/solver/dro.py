"""Distributionally robust MLE over the two-level parametric KL ambiguity set.

The robust objective at w is F(w) = h_Q(t(w)) where t_c(w) is the worst-case
conditional loss of group c (see :mod:`.inner`) and h_Q is the support
function of the marginal layer (see :mod:`.support`).  F is convex but has
kinks: at lambda_c = 0 when rho_c > 0, on saturated branches, and where the
marginal adversary puts all mass on the largest losses.

The outer solve minimises smoothed surrogates F_tau obtained by adding
tau**2 / gamma_c and tau**2 / beta to the inner dual problems.  F_tau is
convex and smooth, and F <= F_tau <= F + 2 * tau * (sqrt(epsilon) + sqrt(max rho)).
Damped Newton is run on a decreasing tau schedule with warm starts, and the
reported objective is the exact F at the final iterate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..dataio import Dataset, GroupedDataset, group
from ..errors import DimensionError, InvalidInputError, NotConvergedWarning, UnboundedMLEWarning
from ..expfam import ExpFamilySpec, LinearParamMap
from ..nominal import (
    AmbiguityRadii,
    Construction,
    Multiple,
    NominalDistribution,
    build_mle_fit,
    build_moment_match,
    radii_from_rate,
)
from .inner import ConditionalBounds, conditional_bounds, conditional_losses, point_bounds
from .mle import fit_mle, fit_mle_report
from .optim import SmoothConvexConfig, lbfgs_minimize, newton_minimize
from .support import SupportResult, support_core


@dataclass(frozen=True)
class DroProblem:
    """Robust GLM fit on grouped data.

    Parameters
    ----------
    spec : ExpFamilySpec
    nominal : NominalDistribution
    radii : AmbiguityRadii
    param_map : LinearParamMap
    """

    spec: ExpFamilySpec
    nominal: NominalDistribution
    radii: AmbiguityRadii
    param_map: LinearParamMap = field(default_factory=LinearParamMap)

    def __post_init__(self):
        if self.radii.rho.shape != self.nominal.p_hat.shape:
            raise DimensionError("rho must have one entry per group")
        self.radii.check_feasible(self.nominal.p_hat)

    @property
    def w_dim(self) -> int:
        return self.nominal.grouped.x_hat.shape[1]

    @property
    def x_hat(self) -> np.ndarray:
        return self.nominal.grouped.x_hat

    @cached_property
    def bounds(self) -> ConditionalBounds:
        return conditional_bounds(self.spec, self.nominal.theta_hat, self.radii.rho)

    @classmethod
    def from_grouped(cls, grouped: GroupedDataset, a: float, epsilon_mode=Multiple(2.0),
                     construction: Construction | str = Construction.MOMENT_MATCH,
                     clamp_tau: float = 0.5, w_mle=None) -> "DroProblem":
        """Build the nominal with the given construction and radii rho_c = a / N_c."""
        construction = Construction(construction)
        if construction is Construction.MOMENT_MATCH:
            nominal = build_moment_match(grouped, clamp_tau)
        else:
            if w_mle is None:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", UnboundedMLEWarning)
                    w_mle = fit_mle(grouped.family, grouped)
            nominal = build_mle_fit(grouped, w_mle)
        return cls(grouped.family, nominal, radii_from_rate(grouped, a, epsilon_mode))


@dataclass(frozen=True)
class SolverReport:
    iterations: int
    grad_norm: float
    status: str
    tau: float
    history: tuple = ()


@dataclass(frozen=True)
class DroSolution:
    """Optimal robust fit.

    ``gamma[c]`` is ``inf`` for groups with rho_c = 0 or lambda_c = 0 and
    ``0`` on saturated branches; ``beta`` is ``inf`` when the marginal set is
    a singleton and ``0`` in the vertex limit (``alpha`` then ``-inf`` or
    ``max(t)``).
    """

    w_star: np.ndarray
    alpha: float
    beta: float
    gamma: np.ndarray
    t: np.ndarray
    q: np.ndarray
    objective: float
    report: SolverReport
    regime: str = "interior"


class CompositeObjective:
    """F(w) = h_Q(t(X w)) and its smoothed surrogates F_tau."""

    def __init__(self, X, p_hat, rho, epsilon: float, bounds: ConditionalBounds):
        self.X = np.asarray(X, dtype=float)
        self.p_hat = np.asarray(p_hat, dtype=float)
        self.rho = np.asarray(rho, dtype=float)
        self.epsilon = float(epsilon)
        self.bounds = bounds

    def parts(self, w, tau: float = 0.0, hessian: bool = False):
        lam = self.X @ w
        cl = conditional_losses(self.bounds, lam, tau)
        sr = support_core(self.p_hat, self.rho, self.epsilon, cl.t, tau=tau, hessian=hessian)
        return lam, cl, sr

    def value(self, w, tau: float = 0.0) -> float:
        return self.parts(w, tau)[2].value

    def fgh(self, w, tau: float = 0.0, order: int = 2):
        _, cl, sr = self.parts(w, tau, hessian=order >= 2)
        if order == 0:
            return sr.value
        g = self.X.T @ (sr.q * cl.dt)
        if order == 1:
            return sr.value, g
        A = self.X * cl.dt[:, None]
        H = (self.X * (sr.q * cl.d2t)[:, None]).T @ self.X + A.T @ sr.hess @ A
        return sr.value, g, 0.5 * (H + H.T)

    def gradient(self, w, tau: float = 0.0) -> np.ndarray:
        return self.fgh(w, tau, order=1)[1]


def _solve_composite(obj: CompositeObjective, w0, cfg: SmoothConvexConfig) -> DroSolution:
    w = np.array(w0, dtype=float)
    tau = cfg.tau_start
    history: list = []
    iters = 0
    while True:
        if cfg.method == "lbfgs":
            res = lbfgs_minimize(lambda z: obj.fgh(z, tau, 1), w, cfg)
        else:
            res = newton_minimize(lambda z: obj.fgh(z, tau, 2), w, cfg, fun=lambda z: obj.value(z, tau))
        w = res.x
        history.extend(res.history)
        iters += res.n_iter
        if tau <= cfg.tau_final:
            break
        tau = max(tau / 10.0, cfg.tau_final)
    status = "converged" if res.status == "converged" else res.status
    if status == "max_iter":
        status = "not_converged"
        warnings.warn(f"outer solve hit max_iter={cfg.max_iter} (|grad|={res.grad_norm:.3e})",
                      NotConvergedWarning, stacklevel=3)
    _, cl, sr = obj.parts(w)
    report = SolverReport(iters, res.grad_norm, status, tau, tuple(history))
    return DroSolution(w, sr.alpha, sr.beta, cl.gamma, cl.t, sr.q, sr.value, report, sr.regime)


def _nominal_minimizer(problem: DroProblem, cfg: SmoothConvexConfig) -> np.ndarray:
    g = problem.nominal.grouped
    target = GroupedDataset.from_arrays(g.x_hat, g.counts, problem.nominal.mu_hat, g.family)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnboundedMLEWarning)
        res = fit_mle_report(problem.spec, target, config=cfg)
    return res.x if res.status != "unbounded" else np.zeros(problem.w_dim)


def problem_objective(problem: DroProblem) -> CompositeObjective:
    return CompositeObjective(problem.x_hat, problem.nominal.p_hat, problem.radii.rho,
                              problem.radii.epsilon, problem.bounds)


def solve_dro(problem: DroProblem, config: SmoothConvexConfig | None = None, warm_start=None) -> DroSolution:
    """Minimise the worst-case expected log-loss over w.

    The default warm start is the minimiser of the nominal expected loss,
    which is the MLE for MLE-compatible nominals.
    """
    cfg = config or SmoothConvexConfig()
    w0 = _nominal_minimizer(problem, cfg) if warm_start is None else np.asarray(warm_start, dtype=float)
    if w0.shape != (problem.w_dim,):
        raise DimensionError(f"warm start must have shape ({problem.w_dim},)")
    return _solve_composite(problem_objective(problem), w0, cfg)


def dro_objective(problem: DroProblem, w) -> float:
    """Exact worst-case expected log-loss at w."""
    return problem_objective(problem).value(np.asarray(w, dtype=float))


def dro_gradient(problem: DroProblem, w) -> np.ndarray:
    """Envelope gradient of :func:`dro_objective` (a subgradient at kinks)."""
    return problem_objective(problem).gradient(np.asarray(w, dtype=float))


def nominal_expected_loss(problem: DroProblem, w) -> float:
    lam = problem.x_hat @ np.asarray(w, dtype=float)
    t_hat = problem.spec.psi(lam) - lam * problem.nominal.mu_hat
    return float(problem.nominal.p_hat @ t_hat)


# Nonparametric KL baseline


def _kl_objective(spec: ExpFamilySpec, dataset: Dataset, epsilon: float) -> CompositeObjective:
    if dataset.family != spec:
        raise InvalidInputError("dataset family does not match spec")
    if not (np.isfinite(epsilon) and epsilon >= 0):
        raise InvalidInputError("epsilon must be finite and >= 0")
    n = dataset.n_samples
    return CompositeObjective(dataset.x, np.full(n, 1.0 / n), np.zeros(n), epsilon,
                              point_bounds(spec, dataset.t_y))


def kl_dro_objective(spec: ExpFamilySpec, dataset: Dataset, w, epsilon: float) -> float:
    """sup of the expected log-loss over reweightings q with KL(q || uniform) <= epsilon."""
    return _kl_objective(spec, dataset, epsilon).value(np.asarray(w, dtype=float))


def solve_kl_dro_report(spec: ExpFamilySpec, dataset: Dataset, param_map: LinearParamMap | None = None,
                        epsilon: float = 0.0, config: SmoothConvexConfig | None = None,
                        warm_start=None) -> DroSolution:
    cfg = config or SmoothConvexConfig()
    obj = _kl_objective(spec, dataset, epsilon)
    if warm_start is None:
        X = dataset.x
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnboundedMLEWarning)
            res = fit_mle_report(spec, dataset, config=cfg)
        warm_start = res.x if res.status != "unbounded" else np.zeros(X.shape[1])
    return _solve_composite(obj, np.asarray(warm_start, dtype=float), cfg)


def solve_kl_dro_nonparametric(spec: ExpFamilySpec, dataset: Dataset, param_map: LinearParamMap | None = None,
                               epsilon: float = 0.0, config: SmoothConvexConfig | None = None,
                               warm_start=None) -> np.ndarray:
    """Minimiser of the KL-DRO objective around the empirical distribution."""
    return solve_kl_dro_report(spec, dataset, param_map, epsilon, config, warm_start).w_star


# Variance surrogate

SMOOTHNESS_GRID = 401
SATURATED_SPAN = 60.0


def local_smoothness(spec: ExpFamilySpec, bounds: ConditionalBounds) -> np.ndarray:
    """max of Psi'' over each group's reachable natural-parameter interval.

    Evaluated on a uniform grid plus endpoints; saturated sides are truncated
    at ``SATURATED_SPAN`` from theta_hat.
    """
    th = bounds.theta_hat
    lo = th - np.minimum(bounds.d_lo, SATURATED_SPAN)
    hi = th + np.minimum(bounds.d_hi, SATURATED_SPAN)
    grid = lo[:, None] + (hi - lo)[:, None] * np.linspace(0.0, 1.0, SMOOTHNESS_GRID)[None, :]
    return np.max(spec.hess(grid), axis=1)


@dataclass(frozen=True)
class SurrogateBound:
    lhs: float
    rhs: float
    kappa1: float
    kappa2: float
    variance: float
    sigma: np.ndarray

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.kappa1, self.kappa2))

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + 1e-12 * max(1.0, abs(self.rhs))


def surrogate_bound(problem: DroProblem, w) -> SurrogateBound:
    """Worst case versus mean + kappa1 * std + kappa2 * max_c |lambda_c| under the nominal."""
    w = np.asarray(w, dtype=float)
    spec, nom = problem.spec, problem.nominal
    lam = problem.x_hat @ w
    mu = nom.mu_hat
    t_hat = spec.psi(lam) - lam * mu
    mean = float(nom.p_hat @ t_hat)
    var = float(nom.p_hat @ (lam ** 2 * spec.hess(nom.theta_hat) + (t_hat - mean) ** 2))
    kappa1 = float(np.sqrt(2.0 * problem.radii.epsilon) / np.sqrt(nom.p_hat.min()))
    sigma = local_smoothness(spec, problem.bounds)
    kappa2 = float(np.sqrt(2.0 * problem.radii.rho.max() * sigma.max()))
    lhs = dro_objective(problem, w)
    rhs = mean + kappa1 * np.sqrt(var) + kappa2 * float(np.abs(lam).max())
    return SurrogateBound(lhs, float(rhs), kappa1, kappa2, var, sigma)
