"""Scalar exponential families with density h(y) exp(theta * T(y) - Psi(theta)).

Three families ship: Poisson (Psi = exp), Bernoulli (Psi = log(1 + e^theta))
and a Gaussian with fixed variance s2 (theta = mean / s2, Psi = s2 theta^2 / 2).
All use T(y) = y and a scalar natural parameter.

The :class:`ExpFamilySpec` methods (``psi``, ``grad``, ``hess``, ...) are
unchecked vectorised kernels meant for inner loops.  The module-level
functions (:func:`log_partition`, :func:`kl_divergence`, ...) validate their
inputs and are the public entry points.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit, xlogy

from .errors import (
    BoundaryMeanError,
    ConsistencyError,
    DimensionError,
    InvalidInputError,
)

POISSON_THETA_CAP = 700.0
KL_CLAMP_TOL = 1e-12


class FamilyId(str, enum.Enum):
    POISSON = "poisson"
    BERNOULLI = "bernoulli"
    GAUSSIAN = "gaussian"


class _PoissonKernel:
    mean_domain = (0.0, np.inf)

    def psi(self, theta):
        return np.exp(theta)

    def grad(self, theta):
        return np.exp(theta)

    def hess(self, theta):
        return np.exp(theta)

    def grad_inv(self, mu):
        return np.log(mu)

    def phi(self, mu):
        return xlogy(mu, mu) - mu

    def kl_shift(self, theta_hat, delta):
        # e^theta_hat * (e^delta (delta - 1) + 1), series near 0 to avoid cancellation
        delta = np.asarray(delta, dtype=float)
        small = np.abs(delta) < 0.1
        ds = np.where(small, delta, 0.0)
        series = np.zeros_like(ds)
        term = ds.copy()
        for k in range(2, 16):
            term = term * ds / k
            series = series + (k - 1) * term
        theta_hat = np.asarray(theta_hat, dtype=float)
        with np.errstate(invalid="ignore", over="ignore"):
            direct = np.exp(theta_hat + delta) * (delta - 1.0) + np.exp(theta_hat)
            direct = np.where(delta == -np.inf, np.exp(theta_hat), direct)
        return np.where(small, np.exp(theta_hat) * series, direct)

    def kl_sup(self, theta_hat, direction):
        # theta -> -inf drives the law to a point mass at zero
        if direction < 0:
            return np.exp(theta_hat)
        return np.full_like(np.asarray(theta_hat, dtype=float), np.inf)

    def sample(self, theta, rng, size=None):
        return rng.poisson(np.exp(theta), size=size).astype(float)

    def check_stat(self, t):
        return bool(np.all(t >= 0) and np.all(t == np.floor(t)))


class _BernoulliKernel:
    mean_domain = (0.0, 1.0)

    def psi(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.maximum(theta, 0.0) + np.log1p(np.exp(-np.abs(theta)))

    def grad(self, theta):
        return expit(theta)

    def hess(self, theta):
        return expit(theta) * expit(-np.asarray(theta, dtype=float))

    def grad_inv(self, mu):
        return logit(mu)

    def phi(self, mu):
        return xlogy(mu, mu) + xlogy(1.0 - mu, 1.0 - mu)

    def kl_sup(self, theta_hat, direction):
        theta_hat = np.asarray(theta_hat, dtype=float)
        return self.psi(theta_hat) if direction < 0 else self.psi(-theta_hat)

    def sample(self, theta, rng, size=None):
        p = expit(theta)
        return (rng.random(size=size if size is not None else np.shape(p)) < p).astype(float)

    def check_stat(self, t):
        return bool(np.all((t == 0) | (t == 1)))


class _GaussianKernel:
    mean_domain = (-np.inf, np.inf)

    def __init__(self, variance: float):
        self.s2 = variance

    def psi(self, theta):
        return 0.5 * self.s2 * np.square(theta)

    def grad(self, theta):
        return self.s2 * np.asarray(theta, dtype=float)

    def hess(self, theta):
        return np.full_like(np.asarray(theta, dtype=float), self.s2)

    def grad_inv(self, mu):
        return np.asarray(mu, dtype=float) / self.s2

    def phi(self, mu):
        return 0.5 * np.square(mu) / self.s2

    def kl_shift(self, theta_hat, delta):
        return 0.5 * self.s2 * np.square(delta)

    def kl_sup(self, theta_hat, direction):
        return np.full_like(np.asarray(theta_hat, dtype=float), np.inf)

    def sample(self, theta, rng, size=None):
        return rng.normal(self.s2 * np.asarray(theta), np.sqrt(self.s2), size=size)

    def check_stat(self, t):
        return True


@dataclass(frozen=True)
class ExpFamilySpec:
    """A scalar exponential family.

    Parameters
    ----------
    family_id : FamilyId
    dim_p : int
        Dimension of the natural parameter; the built-in families have 1.
    unit_variance : float
        Fixed variance of the Gaussian family (ignored otherwise).
    """

    family_id: FamilyId
    dim_p: int = 1
    unit_variance: float = 1.0
    _k: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        fid = FamilyId(self.family_id)
        object.__setattr__(self, "family_id", fid)
        if self.dim_p != 1:
            raise InvalidInputError("built-in families have a scalar natural parameter (dim_p=1)")
        if not (np.isfinite(self.unit_variance) and self.unit_variance > 0):
            raise InvalidInputError("unit_variance must be finite and > 0")
        if fid is FamilyId.POISSON:
            kernel = _PoissonKernel()
        elif fid is FamilyId.BERNOULLI:
            kernel = _BernoulliKernel()
        else:
            kernel = _GaussianKernel(float(self.unit_variance))
        object.__setattr__(self, "_k", kernel)

    @classmethod
    def from_name(cls, name: str, unit_variance: float = 1.0) -> "ExpFamilySpec":
        try:
            return cls(FamilyId(name.lower()), unit_variance=unit_variance)
        except ValueError:
            raise InvalidInputError(f"unknown family {name!r}") from None

    @property
    def name(self) -> str:
        return self.family_id.value

    @property
    def mean_domain(self) -> tuple[float, float]:
        return self._k.mean_domain

    # Unchecked kernels.  Overflow yields inf rather than an exception.

    def psi(self, theta):
        with np.errstate(over="ignore"):
            return self._k.psi(theta)

    def grad(self, theta):
        with np.errstate(over="ignore"):
            return self._k.grad(theta)

    def hess(self, theta):
        with np.errstate(over="ignore"):
            return self._k.hess(theta)

    def grad_inv(self, mu):
        with np.errstate(divide="ignore"):
            return self._k.grad_inv(mu)

    def phi(self, mu):
        return self._k.phi(mu)

    def kl(self, theta1, theta2):
        theta1 = np.asarray(theta1, dtype=float)
        theta2 = np.asarray(theta2, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            if hasattr(self._k, "kl_shift"):
                return self._k.kl_shift(theta2, theta1 - theta2)
            return (theta1 - theta2) * self._k.grad(theta1) - self._k.psi(theta1) + self._k.psi(theta2)

    def kl_sup(self, theta_hat, direction: int):
        """Limit of KL(f(theta) || f(theta_hat)) as theta -> direction * inf."""
        with np.errstate(over="ignore"):
            return self._k.kl_sup(theta_hat, direction)

    def boundary_mean(self, direction: int) -> float:
        lo, hi = self._k.mean_domain
        return lo if direction < 0 else hi

    def sample(self, theta, rng: np.random.Generator, size=None) -> np.ndarray:
        return self._k.sample(theta, rng, size)

    def valid_stat(self, t) -> bool:
        return self._k.check_stat(np.asarray(t, dtype=float))


def poisson() -> ExpFamilySpec:
    return ExpFamilySpec(FamilyId.POISSON)


def bernoulli() -> ExpFamilySpec:
    return ExpFamilySpec(FamilyId.BERNOULLI)


def gaussian(variance: float = 1.0) -> ExpFamilySpec:
    return ExpFamilySpec(FamilyId.GAUSSIAN, unit_variance=variance)


@dataclass(frozen=True)
class LinearParamMap:
    """The GLM parameter map (w, x) -> x @ w."""

    def __call__(self, w, x) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        x = np.asarray(x, dtype=float)
        if w.ndim != 1 or x.shape[-1] != w.shape[0]:
            raise DimensionError(f"cannot map w of shape {w.shape} with x of shape {x.shape}")
        return x @ w


def _as_theta(spec: ExpFamilySpec, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise InvalidInputError("natural parameter must be finite")
    if spec.family_id is FamilyId.POISSON and np.any(np.abs(theta) > POISSON_THETA_CAP):
        raise InvalidInputError(f"Poisson natural parameter beyond |theta| <= {POISSON_THETA_CAP:g}")
    return theta


def _scalar_or_array(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


def log_partition(spec: ExpFamilySpec, theta):
    """Psi(theta)."""
    return _scalar_or_array(spec.psi(_as_theta(spec, theta)))


def mean_param(spec: ExpFamilySpec, theta):
    """Mean parameter grad Psi(theta)."""
    return _scalar_or_array(spec.grad(_as_theta(spec, theta)))


def natural_from_mean(spec: ExpFamilySpec, mu):
    """Inverse of :func:`mean_param`.

    Raises
    ------
    BoundaryMeanError
        If ``mu`` sits on the boundary of the mean domain (0 for Poisson,
        0 or 1 for Bernoulli).
    """
    mu = np.asarray(mu, dtype=float)
    if np.any(np.isnan(mu)):
        raise InvalidInputError("mean parameter is NaN")
    lo, hi = spec.mean_domain
    if np.any((mu == lo) | (mu == hi)):
        raise BoundaryMeanError(f"mean parameter on the boundary of ({lo}, {hi}) for {spec.name}")
    if np.any((mu < lo) | (mu > hi)) or not np.all(np.isfinite(mu)):
        raise InvalidInputError(f"mean parameter outside ({lo}, {hi}) for {spec.name}")
    return _scalar_or_array(spec.grad_inv(mu))


def hessian_log_partition(spec: ExpFamilySpec, theta):
    return _scalar_or_array(spec.hess(_as_theta(spec, theta)))


def kl_divergence(spec: ExpFamilySpec, theta1, theta2):
    """KL(f(.|theta1) || f(.|theta2)) in closed form.

    Values in [-1e-12, 0) (scaled by the magnitude of the terms) are
    rounding noise and are returned as 0.
    """
    t1 = _as_theta(spec, theta1)
    t2 = _as_theta(spec, theta2)
    kl = np.asarray(spec.kl(t1, t2))
    scale = np.maximum(1.0, np.abs(spec.psi(t1)) + np.abs(spec.psi(t2)) + np.abs((t1 - t2) * spec.grad(t1)))
    tol = KL_CLAMP_TOL * scale
    if np.any(kl < -tol):
        raise ConsistencyError(f"closed-form KL is negative beyond rounding: {kl.min():.3e}")
    return _scalar_or_array(np.where(kl < 0, 0.0, kl))


def log_loss(spec: ExpFamilySpec, param_map: LinearParamMap, x, t_y, w) -> float:
    """Negative log-likelihood Psi(lambda) - T(y) * lambda with lambda = param_map(w, x)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionError("x must be a single covariate vector")
    t_y = np.asarray(t_y, dtype=float).reshape(-1)
    if t_y.shape[0] != spec.dim_p:
        raise DimensionError(f"T(y) must have length {spec.dim_p}")
    lam = np.atleast_1d(param_map(w, x))
    lam = _as_theta(spec, lam)
    return float(np.sum(spec.psi(lam)) - t_y @ lam)


def conjugate(spec: ExpFamilySpec, mu):
    """Convex conjugate phi(mu) = mu * theta(mu) - Psi(theta(mu)) for interior mu."""
    theta = np.asarray(natural_from_mean(spec, mu), dtype=float)
    mu = np.asarray(mu, dtype=float)
    return _scalar_or_array(mu * theta - spec.psi(theta))
