"""The adversary's optimal joint distribution for a fixed coefficient vector."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .errors import InvalidInputError, RootFindingError
from .expfam import ExpFamilySpec, _as_theta
from .nominal import AmbiguityRadii, marginal_divergence
from .solver.dro import DroProblem
from .solver.optim import monotone_root
from .solver.support import _check_simplex, support_core

GAMMA_BRACKET = (1e-8, 1e8)
FOC_TOL = 1e-12


def _foc(spec: ExpFamilySpec, th, lam, rho, gamma):
    """rho - KL(theta_hat - lam/gamma || theta_hat) and its derivative in log(gamma)."""
    d = lam / gamma
    z = th - d
    with np.errstate(over="ignore", invalid="ignore"):
        g = rho - spec.kl(z, th)
        dg = d * d * spec.hess(z)
    return np.where(np.isnan(g), -np.inf, g), np.where(np.isfinite(dg), dg, 0.0)


def worst_conditionals(spec: ExpFamilySpec, theta_hat, lam, rho):
    """Vectorised :func:`worst_conditional`.

    Returns
    -------
    theta_star, gamma_star, t_star, foc_resid : ndarray
    """
    th = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    lam = np.broadcast_to(np.asarray(lam, dtype=float), th.shape).copy()
    rho = np.broadcast_to(np.asarray(rho, dtype=float), th.shape).copy()
    theta_star = th.copy()
    gamma = np.full(th.shape, np.inf)
    resid = np.zeros(th.shape)
    live = (rho > 0) & (lam != 0)
    direction = -np.sign(lam)
    sup = np.where(direction < 0, spec.kl_sup(th, -1), spec.kl_sup(th, 1))
    sat = live & (sup <= rho)
    theta_star[sat] = direction[sat] * np.inf
    gamma[sat] = 0.0
    idx = np.flatnonzero(live & ~sat)
    if idx.size:
        t_i, l_i, r_i = th[idx], lam[idx], rho[idx]

        def fun(logg, sub):
            return _foc(spec, t_i[sub], l_i[sub], r_i[sub], np.exp(logg))

        lo = np.full(idx.size, np.log(GAMMA_BRACKET[0]))
        hi = np.full(idx.size, np.log(GAMMA_BRACKET[1]))
        allidx = np.arange(idx.size)
        for _ in range(100):
            f_lo = fun(lo, allidx)[0]
            f_hi = fun(hi, allidx)[0]
            bad_lo, bad_hi = f_lo >= 0, f_hi <= 0
            if not (bad_lo.any() or bad_hi.any()):
                break
            lo[bad_lo] -= np.log(100.0)
            hi[bad_hi] += np.log(100.0)
        else:
            k = idx[(bad_lo | bad_hi)][0]
            raise RootFindingError(
                f"gamma root not bracketed (theta_hat={th[k]:.6g}, lambda={lam[k]:.6g}, rho={rho[k]:.6g})")
        d0 = np.sqrt(2.0 * r_i / np.maximum(spec.hess(t_i), 1e-300))
        x0 = np.clip(np.log(np.abs(l_i) / d0), lo, hi)
        root, res, ok = monotone_root(fun, lo, hi, x0=x0, ftol=FOC_TOL, xtol=1e-16)
        gamma[idx] = np.exp(root)
        theta_star[idx] = t_i - l_i / gamma[idx]
        resid[idx] = np.abs(res)
    mu_star = np.where(np.isinf(theta_star),
                       np.where(theta_star > 0, spec.boundary_mean(1), spec.boundary_mean(-1)),
                       spec.grad(np.where(np.isinf(theta_star), 0.0, theta_star)))
    t_star = spec.psi(lam) - lam * mu_star
    return theta_star, gamma, t_star, resid


def worst_conditional(spec: ExpFamilySpec, theta_hat_c: float, lambda_c: float, rho_c: float):
    """Worst-case conditional parameter theta_hat_c - lambda_c / gamma*.

    Returns
    -------
    theta_star_c : float
        ``theta_hat_c`` when rho_c = 0 or lambda_c = 0; +/-inf when the KL
        budget is never exhausted before the edge of the family.
    gamma_star_c : float
        ``inf`` in the degenerate cases above, ``0`` when saturated.
    t_star_c : float
        Psi(lambda_c) - lambda_c * mean(theta_star_c).
    """
    theta_hat_c = float(_as_theta(spec, theta_hat_c))
    lambda_c = float(_as_theta(spec, lambda_c))
    if not (np.isfinite(rho_c) and rho_c >= 0):
        raise InvalidInputError("rho_c must be finite and >= 0")
    th, g, t, _ = worst_conditionals(spec, [theta_hat_c], [lambda_c], [rho_c])
    return float(th[0]), float(g[0]), float(t[0])


@dataclass(frozen=True)
class MarginalWorstCase:
    """Adversarial marginal weights and the dual pair (alpha, beta).

    ``limit`` is ``None`` for an interior solution, ``"beta_inf"`` when the
    marginal set is a singleton and ``"beta_zero"`` when the adversary loads
    only the largest losses.  Iterates as ``(q, alpha, beta)``.
    """

    q: np.ndarray
    alpha: float
    beta: float
    value: float
    limit: str | None
    resid_alpha: float
    resid_beta: float

    def __iter__(self):
        return iter((self.q, self.alpha, self.beta))


def worst_marginal(p_hat, rho, epsilon: float, t_star) -> MarginalWorstCase:
    """q* proportional to p_hat exp((t - alpha)/beta - rho - 1) with (alpha, beta) optimal."""
    p_hat = _check_simplex(p_hat)
    t = np.asarray(t_star, dtype=float).reshape(-1)
    if t.shape != p_hat.shape:
        raise InvalidInputError("t_star must have one entry per group")
    radii = AmbiguityRadii(epsilon, np.broadcast_to(np.asarray(rho, dtype=float), p_hat.shape))
    radii.check_feasible(p_hat)
    rho = radii.rho
    sr = support_core(p_hat, rho, radii.epsilon, t)
    limit = {"singleton": "beta_inf", "vertex": "beta_zero"}.get(sr.regime)
    if limit is None:
        z = (t - sr.alpha) / sr.beta - rho - 1.0
        r_alpha = float(np.sum(p_hat * np.exp(z)) - 1.0)
        r_beta = float(radii.epsilon - marginal_divergence(sr.q, p_hat, rho))
    else:
        r_alpha = float(sr.q.sum() - 1.0)
        r_beta = 0.0
    return MarginalWorstCase(sr.q, sr.alpha, sr.beta, sr.value, limit, r_alpha, r_beta)


@dataclass(frozen=True)
class WorstCaseDistribution:
    """Joint law q*[c] * f(y | theta_star[c]) attaining the robust objective at w."""

    q_star: np.ndarray
    theta_star: np.ndarray
    t_star: np.ndarray
    gamma_star: np.ndarray
    alpha_star: float
    beta_star: float
    attained_objective: float
    foc_residual: np.ndarray
    marginal_limit: str | None
    spec: ExpFamilySpec
    p_hat: np.ndarray
    theta_hat: np.ndarray
    rho: np.ndarray
    epsilon: float
    w: np.ndarray

    def conditional_kl(self) -> np.ndarray:
        """KL(f(theta_star) || f(theta_hat)) per group (limits for infinite theta_star)."""
        finite = np.isfinite(self.theta_star)
        kl = np.where(finite, self.spec.kl(np.where(finite, self.theta_star, 0.0), self.theta_hat), 0.0)
        sup_lo = self.spec.kl_sup(self.theta_hat, -1)
        sup_hi = self.spec.kl_sup(self.theta_hat, 1)
        return np.where(finite, kl, np.where(self.theta_star > 0, sup_hi, sup_lo))

    def marginal_divergence(self) -> float:
        return marginal_divergence(self.q_star, self.p_hat, self.rho)

    def joint_kl(self) -> float:
        q = self.q_star
        return float(np.sum(xlogy(q, q) - xlogy(q, self.p_hat)) + q @ np.where(q > 0, self.conditional_kl(), 0.0))

    def to_dict(self) -> dict:
        def enc(v):
            v = float(v)
            return v if np.isfinite(v) else ("inf" if v > 0 else "-inf")

        return {
            "family": self.spec.name,
            "w": [enc(v) for v in self.w],
            "q_star": [enc(v) for v in self.q_star],
            "theta_star": [enc(v) for v in self.theta_star],
            "t_star": [enc(v) for v in self.t_star],
            "gamma_star": [enc(v) for v in self.gamma_star],
            "alpha_star": enc(self.alpha_star),
            "beta_star": enc(self.beta_star),
            "attained_objective": enc(self.attained_objective),
            "marginal_limit": self.marginal_limit,
            "epsilon": self.epsilon,
            "rho": [float(r) for r in self.rho],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def assemble(problem: DroProblem, w) -> WorstCaseDistribution:
    """Worst-case conditionals and marginal at w."""
    w = np.asarray(w, dtype=float)
    if w.shape != (problem.w_dim,):
        raise InvalidInputError(f"w must have shape ({problem.w_dim},)")
    lam = problem.x_hat @ w
    th_hat = problem.nominal.theta_hat
    rho = problem.radii.rho
    theta_star, gamma, t_star, resid = worst_conditionals(problem.spec, th_hat, lam, rho)
    m = worst_marginal(problem.nominal.p_hat, rho, problem.radii.epsilon, t_star)
    return WorstCaseDistribution(
        q_star=m.q, theta_star=theta_star, t_star=t_star, gamma_star=gamma,
        alpha_star=m.alpha, beta_star=m.beta, attained_objective=float(m.q @ t_star),
        foc_residual=resid, marginal_limit=m.limit, spec=problem.spec, p_hat=problem.nominal.p_hat,
        theta_hat=th_hat, rho=rho, epsilon=problem.radii.epsilon, w=w,
    )
