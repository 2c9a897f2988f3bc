"""Brute-force reference computations for the test suite.

These deliberately avoid the solver code paths: they only evaluate Psi and
its gradient and otherwise use plain bisection, sampling and summation.
They are slow and meant for small instances.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import InvalidInputError, TailBoundWarning
from .expfam import ExpFamilySpec, FamilyId

SATURATION_CAP = 60.0
BISECT_STEPS = 200


def _kl(spec: ExpFamilySpec, th1, th2):
    th1 = np.asarray(th1, dtype=float)
    th2 = np.asarray(th2, dtype=float)
    return (th1 - th2) * spec.grad(th1) - spec.psi(th1) + spec.psi(th2)


def _boundary_distance(spec: ExpFamilySpec, th: float, rho: float, sign: float) -> float:
    """Largest d (up to SATURATION_CAP) with KL(th + sign*d || th) <= rho, by bisection."""
    if rho <= 0:
        return 0.0
    hi = 1.0
    while hi < SATURATION_CAP and _kl(spec, th + sign * hi, th) <= rho:
        hi *= 2.0
    hi = min(hi, SATURATION_CAP)
    if _kl(spec, th + sign * hi, th) <= rho:
        return hi
    lo = 0.0
    for _ in range(BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        if _kl(spec, th + sign * mid, th) <= rho:
            lo = mid
        else:
            hi = mid
    return lo


def _feasible_tilts(p_hat, rho, epsilon, xi, steps: int = 100):
    """Rowwise q proportional to p_hat exp(s * xi - rho) with the largest feasible s.

    Bisection on log(s); the lower (feasible) end is returned.
    """
    logp = np.log(p_hat)
    logw = logp - rho

    def div(logs):
        z = logw + np.exp(logs)[:, None] * (xi - xi.max(axis=1, keepdims=True))
        zmax = z.max(axis=1, keepdims=True)
        e = np.exp(z - zmax)
        Z = e.sum(axis=1, keepdims=True)
        logq = z - zmax - np.log(Z)
        q = e / Z
        return q, np.sum(q * (logq - logp), axis=1) + q @ rho

    m = xi.shape[0]
    lo = np.full(m, -30.0)
    hi = np.full(m, 12.0)
    top = div(hi)[1] <= epsilon
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        ok = div(mid)[1] <= epsilon
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    q, d = div(np.where(top, hi, lo))
    infeasible = d > epsilon
    if infeasible.any():
        w0 = np.exp(logw)
        q[infeasible] = w0 / w0.sum()
    return q


def sampled_adversary_bound(problem, w, num_samples: int = 100_000, seed: int = 0) -> float:
    """Largest expected log-loss over randomly generated members of the ambiguity set.

    Each sample moves every group's natural parameter along a random
    direction by a random fraction of the feasible distance (often exactly
    the boundary) and tilts the marginal towards either the sample's own
    losses or a random score, as far as the marginal budget allows.
    """
    spec = problem.spec
    th = problem.nominal.theta_hat
    rho = problem.radii.rho
    p_hat = problem.nominal.p_hat
    eps = problem.radii.epsilon
    lam = problem.x_hat @ np.asarray(w, dtype=float)
    C = th.size
    rng = np.random.default_rng(seed)

    d_lo = np.array([_boundary_distance(spec, th[c], rho[c], -1.0) for c in range(C)])
    d_hi = np.array([_boundary_distance(spec, th[c], rho[c], 1.0) for c in range(C)])

    t_nom = spec.psi(lam) - lam * spec.grad(th)
    best = float(p_hat @ t_nom)
    batch = 20_000
    done = 0
    while done < num_samples:
        m = min(batch, num_samples - done)
        done += m
        sign = rng.choice([-1.0, 1.0], size=(m, C))
        frac = np.where(rng.random((m, C)) < 0.5, 1.0, rng.random((m, C)))
        dist = np.where(sign < 0, d_lo, d_hi) * frac
        theta = th + sign * dist
        losses = spec.psi(lam) - lam * spec.grad(theta)
        use_own = rng.random(m) < 0.5
        xi = np.where(use_own[:, None], losses, rng.standard_normal((m, C)))
        q = _feasible_tilts(p_hat, rho, eps, xi)
        vals = np.sum(q * losses, axis=1)
        best = max(best, float(vals.max()))
    return best


def simplex_kl_maximize(p_hat, rho, epsilon: float, t) -> float:
    """max q @ t over {q : KL(q || p_hat) + q @ rho <= epsilon} along the tilting family."""
    p_hat = np.asarray(p_hat, dtype=float)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), p_hat.shape)
    t = np.asarray(t, dtype=float)
    if p_hat.size > 10:
        raise InvalidInputError("simplex oracle is limited to C <= 10")
    logp = np.log(p_hat)

    def at(s):
        z = logp - rho + s * (t - t.max())
        q = np.exp(z - z.max())
        q /= q.sum()
        with np.errstate(divide="ignore", invalid="ignore"):
            kl = np.sum(np.where(q > 0, q * (np.log(q) - logp), 0.0))
        return q, kl + q @ rho

    top = t == t.max()
    w_top = p_hat[top] * np.exp(-rho[top])
    if -math.log(w_top.sum()) <= epsilon:
        return float(t.max())
    q0, d0 = at(0.0)
    if d0 >= epsilon:
        return float(q0 @ t)
    lo, hi = -40.0, 40.0
    for _ in range(BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        if at(math.exp(mid))[1] <= epsilon:
            lo = mid
        else:
            hi = mid
    return float(at(math.exp(lo))[0] @ t)


def kl_series(spec: ExpFamilySpec, theta1: float, theta2: float, truncation: int | None = None) -> float:
    """KL(f(theta1) || f(theta2)) by summing over the support.

    Poisson uses the base measure 1/k! over k = 0..truncation; the default
    truncation is max(200, mean + 12 sqrt(mean) + 20) for mean = exp(theta1).
    Bernoulli sums the two atoms.
    """
    fid = spec.family_id
    if fid is FamilyId.BERNOULLI:
        ys = np.array([0.0, 1.0])
        logh = np.zeros(2)
    elif fid is FamilyId.POISSON:
        mean = math.exp(theta1)
        if truncation is None:
            truncation = int(max(200.0, math.ceil(mean + 12.0 * math.sqrt(mean) + 20.0)))
        ys = np.arange(truncation + 1, dtype=float)
        logh = -gammaln(ys + 1.0)
        if truncation < 200 or truncation < mean + 12.0 * math.sqrt(mean) + 20.0:
            warnings.warn(f"Poisson series truncated at {truncation} may miss tail mass (mean {mean:.3g})",
                          TailBoundWarning, stacklevel=2)
    else:
        raise InvalidInputError("series KL is available for Poisson and Bernoulli only")
    logf1 = logh + ys * theta1 - float(spec.psi(theta1))
    logf2 = logh + ys * theta2 - float(spec.psi(theta2))
    f1 = np.exp(logf1)
    return float(np.sum(f1 * (logf1 - logf2)))


@dataclass(frozen=True)
class MonteCarloResult:
    """Iterates as ``(mean, stderr)``."""

    mean: float
    stderr: float
    n_clamped: int

    def __iter__(self):
        return iter((self.mean, self.stderr))


def lemma44_monte_carlo(spec: ExpFamilySpec, theta_c: float, N_c: int, reps: int = 1000, seed: int = 0,
                        clamp_tau: float = 0.5) -> MonteCarloResult:
    """Empirical mean of N_c * KL(f(theta_c) || f(theta_hat)) with moment-matched theta_hat.

    Replicates whose sample mean hits the domain boundary are moved inward by
    clamp_tau / N_c and counted in ``n_clamped``.
    """
    if N_c < 1 or reps < 2:
        raise InvalidInputError("need N_c >= 1 and reps >= 2")
    rng = np.random.default_rng(seed)
    theta = np.full((reps, N_c), float(theta_c))
    ybar = spec.sample(theta, rng).mean(axis=1)
    lo, hi = spec.mean_domain
    delta = min(clamp_tau / N_c, 0.5)
    clamp_lo = np.isfinite(lo) & (ybar <= lo)
    clamp_hi = np.isfinite(hi) & (ybar >= hi)
    ybar = np.where(clamp_lo, lo + delta, np.where(clamp_hi, hi - delta, ybar))
    theta_hat = spec.grad_inv(ybar)
    scaled = N_c * _kl(spec, float(theta_c), theta_hat)
    return MonteCarloResult(float(scaled.mean()), float(scaled.std(ddof=1) / math.sqrt(reps)),
                            int(clamp_lo.sum() + clamp_hi.sum()))


def finite_diff(fn, point, step=None):
    """Central-difference gradient with step 1e-6 * (1 + |x_i|) per coordinate."""
    x = np.asarray(point, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    h = 1e-6 * (1.0 + np.abs(x)) if step is None else np.broadcast_to(np.asarray(step, dtype=float), x.shape)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        xp, xm = x + e, x - e
        if scalar:
            g[i] = (fn(xp[0]) - fn(xm[0])) / (2 * h[i])
        else:
            g[i] = (fn(xp) - fn(xm)) / (2 * h[i])
    return float(g[0]) if scalar else g
