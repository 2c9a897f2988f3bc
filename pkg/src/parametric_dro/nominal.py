"""Parametric nominal distributions and ambiguity-set radii."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .dataio import GroupedDataset
from .errors import ConfigError, ConvergenceError, DimensionError, InvalidInputError, RadiiInfeasibleError
from .expfam import ExpFamilySpec, FamilyId, LinearParamMap

DEFAULT_CLAMP_TAU = 0.5
FEASIBILITY_TOL = 1e-12


class Construction(str, enum.Enum):
    MOMENT_MATCH = "moment_match"
    MLE_FIT = "mle_fit"


@dataclass(frozen=True)
class NominalDistribution:
    """Discrete marginal ``grouped.p_hat`` with conditionals f(.|theta_hat[c]).

    Attributes
    ----------
    grouped : GroupedDataset
    theta_hat : ndarray, shape (C,)
    construction : Construction
    clamped : ndarray of bool, shape (C,)
        Groups whose mean statistic was moved off the domain boundary.
    """

    grouped: GroupedDataset
    theta_hat: np.ndarray
    construction: Construction
    clamped: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta_hat, dtype=float).reshape(-1)
        if th.shape[0] != self.grouped.n_groups:
            raise DimensionError("theta_hat must have one entry per group")
        if not np.all(np.isfinite(th)):
            raise InvalidInputError("theta_hat must be finite")
        object.__setattr__(self, "theta_hat", th)
        object.__setattr__(self, "clamped", np.asarray(self.clamped, dtype=bool).reshape(-1))

    @property
    def family(self) -> ExpFamilySpec:
        return self.grouped.family

    @property
    def p_hat(self) -> np.ndarray:
        return self.grouped.p_hat

    @property
    def mu_hat(self) -> np.ndarray:
        return self.family.grad(self.theta_hat)


@dataclass(frozen=True)
class Explicit:
    """Marginal radius given directly."""

    value: float


@dataclass(frozen=True)
class Multiple:
    """Marginal radius ``kappa * sum(p_hat * rho)``."""

    kappa: float = 2.0

    def __post_init__(self):
        if not self.kappa >= 1.0:
            raise ConfigError("Multiple(kappa) needs kappa >= 1")


@dataclass(frozen=True)
class AmbiguityRadii:
    """Marginal radius ``epsilon`` and conditional radii ``rho``."""

    epsilon: float
    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float).reshape(-1)
        eps = float(self.epsilon)
        if not (np.isfinite(eps) and eps >= 0):
            raise InvalidInputError("epsilon must be finite and >= 0")
        if not (np.all(np.isfinite(rho)) and np.all(rho >= 0)):
            raise InvalidInputError("rho must be finite and >= 0")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "rho", rho)

    def check_feasible(self, p_hat) -> None:
        p_hat = np.asarray(p_hat, dtype=float)
        if p_hat.shape != self.rho.shape:
            raise DimensionError("rho must have one entry per group")
        need = float(p_hat @ self.rho)
        if self.epsilon < need - FEASIBILITY_TOL * max(1.0, need):
            raise RadiiInfeasibleError(f"epsilon={self.epsilon:.6g} < sum(p_hat * rho)={need:.6g}")


def _clamped_means(grouped: GroupedDataset, clamp_tau: float) -> tuple[np.ndarray, np.ndarray]:
    t = grouped.t_mean
    fid = grouped.family.family_id
    delta = np.minimum(clamp_tau / grouped.counts, 0.5)
    if fid is FamilyId.POISSON:
        t_new = np.where(t <= 0.0, delta, t)
    elif fid is FamilyId.BERNOULLI:
        t_new = np.where(t <= 0.0, delta, np.where(t >= 1.0, 1.0 - delta, t))
    else:
        t_new = t.copy()
    return t_new, t_new != t


def build_moment_match(grouped: GroupedDataset, clamp_tau: float = DEFAULT_CLAMP_TAU) -> NominalDistribution:
    """theta_hat[c] = (grad Psi)^-1 of the group mean statistic.

    Means on the domain boundary are first moved inward by
    ``clamp_tau / N_c`` (at most 1/2).
    """
    if not (np.isfinite(clamp_tau) and clamp_tau > 0):
        raise ConfigError("clamp_tau must be > 0")
    t, clamped = _clamped_means(grouped, clamp_tau)
    theta = grouped.family.grad_inv(t)
    return NominalDistribution(grouped, theta, Construction.MOMENT_MATCH, clamped)


def build_mle_fit(grouped: GroupedDataset, w_mle, param_map: LinearParamMap | None = None) -> NominalDistribution:
    """theta_hat[c] = lambda(w_mle, x_hat[c])."""
    param_map = param_map or LinearParamMap()
    theta = param_map(w_mle, grouped.x_hat)
    return NominalDistribution(grouped, theta, Construction.MLE_FIT, np.zeros(grouped.n_groups, dtype=bool))


def check_mle_compatibility(nominal: NominalDistribution, param_map: LinearParamMap | None = None,
                            tol: float = 1e-4, config=None) -> bool:
    """Whether the nominal expected-loss minimiser equals the empirical MLE.

    Under the nominal law E[T(Y) | x_hat[c]] = grad Psi(theta_hat[c]), so both
    problems are weighted GLM fits that differ only in their targets.
    """
    from .solver.mle import fit_mle_report

    g = nominal.grouped
    param_map = param_map or LinearParamMap()
    nominal_targets = GroupedDataset.from_arrays(g.x_hat, g.counts, nominal.mu_hat, g.family)
    fits = [fit_mle_report(g.family, d, param_map, config) for d in (nominal_targets, g)]
    for f in fits:
        if f.status != "converged":
            raise ConvergenceError(f"MLE solve did not converge ({f.status}, |grad|={f.grad_norm:.3e})")
    return bool(np.linalg.norm(fits[0].x - fits[1].x) <= tol)


def radii_from_rate(grouped: GroupedDataset, a: float, epsilon_mode=Multiple(2.0)) -> AmbiguityRadii:
    """rho_c = a / N_c, epsilon from ``Explicit`` or ``Multiple``."""
    if not (np.isfinite(a) and a >= 0):
        raise ConfigError("a must be finite and >= 0")
    rho = a / grouped.counts
    base = float(grouped.p_hat @ rho)
    if isinstance(epsilon_mode, Multiple):
        eps = epsilon_mode.kappa * base
    elif isinstance(epsilon_mode, Explicit):
        eps = float(epsilon_mode.value)
    else:
        raise ConfigError(f"unknown epsilon mode {epsilon_mode!r}")
    radii = AmbiguityRadii(eps, rho)
    radii.check_feasible(grouped.p_hat)
    return radii


def marginal_divergence(q, p_hat, rho) -> float:
    """KL(q || p_hat) + q @ rho, the left side of the marginal constraint."""
    q = np.asarray(q, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    return float(np.sum(xlogy(q, q) - xlogy(q, p_hat)) + q @ np.asarray(rho, dtype=float))


def joint_kl(spec: ExpFamilySpec, p_hat, theta_hat, q, theta) -> float:
    """Chain-rule KL between two group-discrete joints with exponential-family conditionals."""
    q = np.asarray(q, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    kl_x = float(np.sum(xlogy(q, q) - xlogy(q, p_hat)))
    kl_y = np.asarray(spec.kl(np.asarray(theta, dtype=float), np.asarray(theta_hat, dtype=float)))
    kl_y = np.where(q > 0, kl_y, 0.0)
    return kl_x + float(q @ kl_y)
