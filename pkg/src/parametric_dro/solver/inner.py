"""Worst-case conditional expected log-loss over a KL ball around f(.|theta_hat).

For a scalar family the adversary moves the natural parameter away from
theta_hat, against the sign of lambda, until the KL budget rho is spent.  The
distance reached in each direction depends on (theta_hat, rho) only, so the
two endpoint means are solved once per group and the worst-case loss is then
closed form in lambda:

    t(lambda) = Psi(lambda) - lambda * mu_lo   (lambda > 0)
    t(lambda) = Psi(lambda) - lambda * mu_hi   (lambda < 0)

The dual multiplier of the one-dimensional problem in gamma is
gamma* = |lambda| / d with d the distance travelled.  Where KL stays below rho
all the way to the edge of the natural parameter space (Poisson towards a
point mass at zero, Bernoulli towards either label) the supremum is a limit:
the endpoint mean is the boundary mean and gamma* = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError, RootFindingError
from ..expfam import ExpFamilySpec, _as_theta
from .optim import monotone_root

ROOT_FTOL = 1e-12


@dataclass(frozen=True)
class ConditionalBounds:
    """Per-group endpoints of the conditional ambiguity balls.

    Attributes
    ----------
    d_lo, d_hi : ndarray
        Distances travelled downwards / upwards in natural parameter
        (0 when rho = 0, inf when saturated).
    mu_lo, mu_hi : ndarray
        Means at those endpoints.
    resid : ndarray
        |KL - rho| at each finite endpoint (0 elsewhere).
    """

    spec: ExpFamilySpec
    theta_hat: np.ndarray
    rho: np.ndarray
    d_lo: np.ndarray
    d_hi: np.ndarray
    mu_lo: np.ndarray
    mu_hi: np.ndarray
    resid_lo: np.ndarray
    resid_hi: np.ndarray

    @property
    def sat_lo(self) -> np.ndarray:
        return np.isinf(self.d_lo)

    @property
    def sat_hi(self) -> np.ndarray:
        return np.isinf(self.d_hi)


def _distances(spec: ExpFamilySpec, theta_hat, rho, sign: float):
    """Distance d >= 0 with KL(theta_hat + sign*d || theta_hat) = rho."""
    C = theta_hat.size
    d = np.zeros(C)
    resid = np.zeros(C)
    live = rho > 0
    sup = np.asarray(spec.kl_sup(theta_hat, sign), dtype=float)
    sat = live & (sup <= rho)
    d[sat] = np.inf
    idx = np.flatnonzero(live & ~sat)
    if idx.size == 0:
        return d, resid
    th, r = theta_hat[idx], rho[idx]

    def g(dd, sub):
        z = th[sub] + sign * dd
        return spec.kl(z, th[sub]) - r[sub], dd * spec.hess(z)

    # Quadratic guess, capped where Psi'' underflows (|theta_hat| large).
    d0 = np.minimum(np.sqrt(2.0 * r / np.maximum(spec.hess(th), 1e-300)), 1.0 + np.abs(th))
    hi = 2.0 * d0
    for _ in range(200):
        f_hi, _ = g(hi, np.arange(idx.size))
        short = ~(f_hi > 0)
        if not short.any():
            break
        hi[short] *= 2.0
    else:
        raise RootFindingError("could not bracket the conditional KL boundary")
    root, res, ok = monotone_root(g, np.zeros(idx.size), hi, x0=np.minimum(d0, hi), ftol=ROOT_FTOL)
    ok &= np.abs(res) <= np.maximum(1e-6 * r, 1e-11)
    if not ok.all():
        bad = idx[~ok][0]
        raise RootFindingError(
            f"conditional boundary root failed (theta_hat={theta_hat[bad]:.6g}, rho={rho[bad]:.6g})")
    d[idx] = root
    resid[idx] = np.abs(res)
    return d, resid


def conditional_bounds(spec: ExpFamilySpec, theta_hat, rho) -> ConditionalBounds:
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    rho = np.broadcast_to(np.asarray(rho, dtype=float), theta_hat.shape).copy()
    d_lo, r_lo = _distances(spec, theta_hat, rho, -1.0)
    d_hi, r_hi = _distances(spec, theta_hat, rho, 1.0)
    mu_hat = spec.grad(theta_hat)
    with np.errstate(invalid="ignore"):
        mu_lo = np.where(np.isinf(d_lo), spec.boundary_mean(-1), spec.grad(theta_hat - np.where(np.isinf(d_lo), 0, d_lo)))
        mu_hi = np.where(np.isinf(d_hi), spec.boundary_mean(1), spec.grad(theta_hat + np.where(np.isinf(d_hi), 0, d_hi)))
    mu_lo = np.where(rho > 0, mu_lo, mu_hat)
    mu_hi = np.where(rho > 0, mu_hi, mu_hat)
    return ConditionalBounds(spec, theta_hat, rho, d_lo, d_hi, mu_lo, mu_hi, r_lo, r_hi)


def point_bounds(spec: ExpFamilySpec, mu) -> ConditionalBounds:
    """Zero-radius bounds centred at given means (may sit on the boundary)."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    z = np.zeros_like(mu)
    return ConditionalBounds(spec, np.full_like(mu, np.nan), z, z, z, mu, mu, z, z)


@dataclass(frozen=True)
class ConditionalLosses:
    t: np.ndarray
    dt: np.ndarray
    d2t: np.ndarray
    gamma: np.ndarray


def conditional_losses(cb: ConditionalBounds, lam, tau: float = 0.0) -> ConditionalLosses:
    """Worst-case conditional losses and their derivatives in lambda.

    With ``tau > 0`` the one-dimensional dual in gamma gets the extra term
    tau**2 / gamma for groups with rho > 0.  This removes the kink at
    lambda = 0 and the saturated limits; the value is never below the exact
    one and at most ``2 * tau * sqrt(rho)`` above it.
    """
    spec = cb.spec
    lam = np.asarray(lam, dtype=float)
    pos = lam > 0
    d = np.where(pos, cb.d_lo, cb.d_hi)
    mu = np.where(pos, cb.mu_lo, cb.mu_hi)
    absl = np.abs(lam)
    t = spec.psi(lam) - lam * mu
    dt = spec.grad(lam) - mu
    d2t = spec.hess(lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = np.where(d > 0, absl / d, np.inf)
    gamma = np.where(absl == 0, np.inf, gamma)
    if tau > 0:
        i = np.flatnonzero(cb.rho > 0)
        if i.size:
            r, zstar = _smoothed_inverse_gamma(cb, lam[i], d[i], tau, i)
            h_star = spec.hess(zstar)
            t[i] = spec.psi(lam[i]) - lam[i] * spec.grad(zstar) + 2.0 * tau * tau * r
            dt[i] = spec.grad(lam[i]) - spec.grad(zstar)
            d2t[i] = spec.hess(lam[i]) + h_star * r * 2.0 * tau * tau / (lam[i] ** 2 * h_star + 2.0 * tau * tau)
            gamma[i] = 1.0 / r
    return ConditionalLosses(t, dt, d2t, gamma)


def _smoothed_inverse_gamma(cb: ConditionalBounds, lam, d, tau: float, idx):
    """r = 1/gamma solving KL(theta_hat - lam*r || theta_hat) + tau^2 r^2 = rho.

    Solved in u = tau * r, where the equation KL + u^2 = rho stays well
    scaled as tau shrinks.
    """
    spec = cb.spec
    th, rho = cb.theta_hat[idx], cb.rho[idx]
    k = lam / tau
    absk = np.abs(k)
    with np.errstate(divide="ignore", invalid="ignore"):
        u_exact = np.where(absk > 0, d / absk, np.inf)
    hi = np.minimum(np.sqrt(rho), u_exact)
    x0 = 1.0 / np.sqrt(np.where(np.isfinite(u_exact), 1.0 / u_exact ** 2, 0.0) + 1.0 / rho)

    def E(u, sub):
        z = th[sub] - k[sub] * u
        return spec.kl(z, th[sub]) + u * u - rho[sub], u * (k[sub] ** 2 * spec.hess(z) + 2.0)

    u, _, ok = monotone_root(E, np.zeros(idx.size), hi, x0=np.minimum(x0, hi), ftol=ROOT_FTOL)
    if not ok.all():
        bad = idx[~ok][0]
        raise RootFindingError(f"smoothed multiplier root failed (theta_hat={cb.theta_hat[bad]:.6g})")
    return u / tau, th - k * u


def worst_theta(cb: ConditionalBounds, lam) -> np.ndarray:
    """Adversarial natural parameters theta_hat -/+ d (infinite when saturated)."""
    lam = np.asarray(lam, dtype=float)
    move = np.where(lam > 0, -cb.d_lo, np.where(lam < 0, cb.d_hi, 0.0))
    move = np.where(cb.rho > 0, move, 0.0)
    with np.errstate(invalid="ignore"):
        return np.where(move == 0, cb.theta_hat, cb.theta_hat + move)


def inner_worst_case(spec: ExpFamilySpec, theta_hat_c: float, lambda_c: float, rho_c: float) -> tuple[float, float]:
    """sup of the expected log-loss over {theta : KL(theta || theta_hat_c) <= rho_c}.

    Returns
    -------
    value : float
    gamma_star : float
        Optimal multiplier; ``inf`` when rho_c = 0 or lambda_c = 0, and ``0``
        when the supremum is only reached in the limit of the parameter space.
    """
    theta_hat_c = float(_as_theta(spec, theta_hat_c))
    lambda_c = float(_as_theta(spec, lambda_c))
    if not (np.isfinite(rho_c) and rho_c >= 0):
        raise InvalidInputError("rho_c must be finite and >= 0")
    cb = conditional_bounds(spec, [theta_hat_c], [rho_c])
    out = conditional_losses(cb, np.array([lambda_c]))
    return float(out.t[0]), float(out.gamma[0])
