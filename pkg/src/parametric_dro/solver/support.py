"""Support function of the KL-constrained simplex

    Q = {q in simplex : KL(q || p_hat) + q @ rho <= epsilon}.

Writing s = 1/beta, the dual objective in beta has derivative epsilon - D(s)
where D(s) = KL(q_s || p_hat) + q_s @ rho and q_s is proportional to
p_hat * exp(s * t - rho).  D increases in s from D(0) = -log sum p_hat e^-rho
to D_top, the same expression restricted to the maximisers of t.  Hence

* epsilon <= D(0): beta* = inf and h = q_0 @ t (singleton set),
* epsilon >= D_top: beta* -> 0 and h = max(t) (vertex regime),
* otherwise beta* = 1/s* with D(s*) = epsilon and h = q @ t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError, RootFindingError
from ..nominal import AmbiguityRadii
from .optim import monotone_root

SINGLETON_TOL = 1e-13
ROOT_FTOL = 1e-13


@dataclass(frozen=True)
class SupportResult:
    """Outcome of a support-function evaluation.

    ``regime`` is one of ``"interior"``, ``"singleton"`` (beta = inf),
    ``"vertex"`` (beta -> 0) or ``"smoothed"`` (penalised dual).
    """

    value: float
    beta: float
    alpha: float
    q: np.ndarray
    regime: str
    resid: float
    hess: np.ndarray | None = None


def _logsumexp(z) -> float:
    m = float(z.max())
    return m + float(np.log(np.exp(z - m).sum()))


def _tilt(s: float, uc, q0, logq0):
    """q_s proportional to q0 * exp(s * uc), with uc centred under q0.

    Returns q_s, K = log E_q0 exp(s * uc) and D(s) - D(0) = s * q_s @ uc - K.
    For small s, K is formed with log1p/expm1 so the excess keeps full
    relative precision even though it is O(s^2).
    """
    z = s * uc
    if float(np.max(np.abs(z))) < 0.5:
        K = float(np.log1p(q0 @ np.expm1(z)))
        q = q0 * np.exp(z - K)
    else:
        w = z + logq0
        K = _logsumexp(w)
        q = np.exp(w - K)
    return q, K, s * float(q @ uc) - K


def support_core(p_hat, rho, epsilon: float, t, tau: float = 0.0, hessian: bool = False) -> SupportResult:
    """Evaluate h_Q(t), optionally smoothed.

    With ``tau > 0`` the dual objective in beta gets the extra term
    tau**2 / beta.  The result is C-infinity in t, never below the exact
    value and at most ``2 * tau * sqrt(epsilon - D(0))`` above it.  No input validation; see
    :func:`support_function`.
    """
    t = np.asarray(t, dtype=float)
    a = np.log(p_hat) - rho
    tmax = float(t.max())
    u = t - tmax
    top = u == 0
    d0 = -_logsumexp(a)
    gap = epsilon - d0
    C = t.size
    logq0 = a + d0
    q0 = np.exp(logq0)

    if gap <= SINGLETON_TOL * max(1.0, epsilon):
        H = np.zeros((C, C)) if hessian else None
        return SupportResult(float(q0 @ t), np.inf, -np.inf, q0, "singleton", float(gap), H)

    if tau <= 0:
        d_top = -_logsumexp(a[top])
        if epsilon >= d_top:
            q = np.where(top, np.exp(a + d_top), 0.0)
            H = np.zeros((C, C)) if hessian else None
            return SupportResult(tmax, 0.0, tmax, q, "vertex", 0.0, H)
    tau2 = tau * tau
    m = float(q0 @ u)
    uc = u - m

    def f(logs, _idx):
        s = float(np.exp(logs[0]))
        q, _, excess = _tilt(s, uc, q0, logq0)
        var = float(q @ (uc - q @ uc) ** 2)
        return np.array([excess + tau2 * s * s - gap]), np.array([s * s * (var + 2.0 * tau2)])

    var0 = float(q0 @ uc ** 2)
    s_guess = np.sqrt(2.0 * gap / (var0 + 2.0 * tau2))
    s_guess = min(max(s_guess, 1e-300), 1e300)
    lo = hi = np.log(s_guess)
    for _ in range(2000):
        if f(np.array([lo]), None)[0][0] < 0:
            break
        lo -= np.log(4.0)
    else:
        raise RootFindingError("support function: lower beta bracket not found")
    for _ in range(2000):
        if f(np.array([hi]), None)[0][0] > 0:
            break
        hi += np.log(4.0)
    else:
        raise RootFindingError("support function: upper beta bracket not found")
    root, res, _ = monotone_root(f, np.array([lo]), np.array([hi]), x0=np.array([np.log(s_guess)]),
                                 ftol=ROOT_FTOL * gap, xtol=1e-15)
    s = float(np.exp(root[0]))
    q, K, excess = _tilt(s, uc, q0, logq0)
    value = float(q @ t) + (gap - excess) / s + tau2 * s
    H = None
    if hessian:
        c = q * (uc - q @ uc)
        v = float(c @ (uc - q @ uc))
        H = s * (np.diag(q) - np.outer(q, q))
        if v + 2.0 * tau2 > 0:
            H -= s * np.outer(c, c) / (v + 2.0 * tau2)
    regime = "smoothed" if tau > 0 else "interior"
    alpha = tmax + m + (K - d0 - 1.0) / s
    return SupportResult(value, 1.0 / s, float(alpha), q, regime, float(res[0]), H)


def _check_simplex(p_hat) -> np.ndarray:
    p_hat = np.asarray(p_hat, dtype=float).reshape(-1)
    if p_hat.size == 0 or np.any(~np.isfinite(p_hat)) or np.any(p_hat <= 0):
        raise InvalidInputError("p_hat must be strictly positive")
    if abs(p_hat.sum() - 1.0) > 1e-9:
        raise InvalidInputError("p_hat must sum to 1")
    return p_hat


def support_function(p_hat, rho, epsilon: float, t) -> tuple[float, float, float]:
    """h_Q(t) = max {q @ t : q in Q}.

    Returns
    -------
    value : float
    beta_star : float
        ``inf`` when Q is a singleton, ``0`` in the vertex limit.
    alpha_star : float
        ``-inf`` when beta_star is infinite.
    """
    p_hat = _check_simplex(p_hat)
    t = np.asarray(t, dtype=float).reshape(-1)
    if t.shape != p_hat.shape or not np.all(np.isfinite(t)):
        raise InvalidInputError("t must be finite with one entry per group")
    radii = AmbiguityRadii(epsilon, np.broadcast_to(np.asarray(rho, dtype=float), p_hat.shape))
    radii.check_feasible(p_hat)
    res = support_core(p_hat, radii.rho, radii.epsilon, t)
    return res.value, res.beta, res.alpha
