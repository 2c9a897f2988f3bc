"""Small unconstrained optimisers and a vectorised monotone root finder.

Everything here is generic: callers pass closures returning function values
and derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class SmoothConvexConfig:
    """Settings for the outer smooth convex solves.

    Parameters
    ----------
    grad_tol : float
        Stop when the gradient norm falls below this.
    max_iter : int
        Iteration cap per solve (per smoothing stage for the DRO solve).
    armijo : float
        Sufficient-decrease constant.
    backtrack : float
        Step shrink factor.
    memory : int
        L-BFGS history length.
    method : str
        ``"newton"`` (exact Hessians) or ``"lbfgs"``.
    tau_start, tau_final : float
        Smoothing schedule for the dual multipliers of the DRO solve.
    """

    grad_tol: float = 1e-8
    max_iter: int = 500
    armijo: float = 1e-4
    backtrack: float = 0.5
    memory: int = 10
    method: str = "newton"
    tau_start: float = 1e-1
    tau_final: float = 1e-8

    def __post_init__(self):
        if not (self.grad_tol > 0 and self.max_iter >= 1):
            raise ConfigError("grad_tol must be > 0 and max_iter >= 1")
        if not (0 < self.armijo < 0.5 and 0 < self.backtrack < 1):
            raise ConfigError("need 0 < armijo < 0.5 and 0 < backtrack < 1")
        if self.memory < 1:
            raise ConfigError("memory must be >= 1")
        if self.method not in ("newton", "lbfgs"):
            raise ConfigError(f"unknown method {self.method!r}")
        if not (0 < self.tau_final <= self.tau_start):
            raise ConfigError("need 0 < tau_final <= tau_start")


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    n_iter: int
    status: str
    history: list = field(default_factory=list)


NOISE_FLOOR = 1e-14
MAX_BACKTRACKS = 60


def _armijo(fun, x, f, g, p, cfg: SmoothConvexConfig):
    slope = float(g @ p)
    step = 1.0
    for _ in range(MAX_BACKTRACKS):
        x_new = x + step * p
        f_new = fun(x_new)
        if np.isfinite(f_new) and f_new <= f + cfg.armijo * step * slope:
            return x_new, f_new, step
        step *= cfg.backtrack
    return None, None, 0.0


def _grad_backtrack(fgh, x, gn: float, p, cfg: SmoothConvexConfig):
    step = 1.0
    for _ in range(MAX_BACKTRACKS):
        x_new = x + step * p
        g_new = fgh(x_new)[1]
        if np.all(np.isfinite(g_new)) and np.linalg.norm(g_new) < gn:
            return x_new
        step *= cfg.backtrack
    return None


def newton_minimize(fgh, x0, cfg: SmoothConvexConfig, fun=None) -> OptimResult:
    """Damped Newton with Armijo backtracking.

    Parameters
    ----------
    fgh : callable
        ``fgh(x) -> (f, g, H)``.
    fun : callable, optional
        Cheap value-only evaluation used by the line search.
    """
    fun = fun or (lambda z: fgh(z)[0])
    x = np.array(x0, dtype=float)
    f, g, H = fgh(x)
    history = [f]
    status = "max_iter"
    it = 0
    for it in range(1, cfg.max_iter + 1):
        gn = float(np.linalg.norm(g))
        if gn <= cfg.grad_tol:
            status = "converged"
            it -= 1
            break
        p = _newton_direction(H, g)
        if float(g @ p) >= 0:
            p = -g
        if -float(g @ p) <= NOISE_FLOOR * max(1.0, abs(f)):
            # Predicted decrease is below rounding of f: backtrack on |grad| instead.
            x_new = _grad_backtrack(fgh, x, gn, p, cfg)
            if x_new is None:
                status = "stalled"
                break
            x = x_new
            f, g, H = fgh(x)
            history.append(f)
            continue
        x_new, f_new, step = _armijo(fun, x, f, g, p, cfg)
        if x_new is None and not np.array_equal(p, -g):
            x_new, f_new, step = _armijo(fun, x, f, g, -g, cfg)
        if x_new is None:
            status = "stalled"
            break
        x = x_new
        f, g, H = fgh(x)
        history.append(f)
    else:
        if np.linalg.norm(g) <= cfg.grad_tol:
            status = "converged"
    return OptimResult(x, float(f), float(np.linalg.norm(g)), it, status, history)


def _newton_direction(H, g) -> np.ndarray:
    n = g.size
    scale = max(float(np.max(np.abs(np.diag(H)))) if n else 1.0, 1e-300)
    shift = 1e-14 * scale
    eye = np.eye(n)
    for _ in range(30):
        try:
            L = np.linalg.cholesky(H + shift * eye)
        except np.linalg.LinAlgError:
            shift = max(shift * 100.0, 1e-12)
            continue
        y = np.linalg.solve(L, -g)
        return np.linalg.solve(L.T, y)
    return -g


def lbfgs_minimize(fg, x0, cfg: SmoothConvexConfig) -> OptimResult:
    """Limited-memory BFGS with Armijo backtracking.

    ``fg(x) -> (f, g)``.  Curvature pairs with s.y <= 0 are skipped.
    """
    x = np.array(x0, dtype=float)
    f, g = fg(x)
    fun = lambda z: fg(z)[0]
    s_list: list = []
    y_list: list = []
    history = [f]
    status = "max_iter"
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if np.linalg.norm(g) <= cfg.grad_tol:
            status = "converged"
            it -= 1
            break
        p = -_two_loop(g, s_list, y_list)
        if float(g @ p) >= 0:
            p = -g
            s_list.clear()
            y_list.clear()
        x_new, f_new, _ = _armijo(fun, x, f, g, p, cfg)
        if x_new is None:
            status = "stalled"
            break
        f_new, g_new = fg(x_new)
        s, y = x_new - x, g_new - g
        if float(s @ y) > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_list.append(s)
            y_list.append(y)
            if len(s_list) > cfg.memory:
                s_list.pop(0)
                y_list.pop(0)
        x, f, g = x_new, f_new, g_new
        history.append(f)
    else:
        if np.linalg.norm(g) <= cfg.grad_tol:
            status = "converged"
    return OptimResult(x, float(f), float(np.linalg.norm(g)), it, status, history)


def _two_loop(g, s_list, y_list) -> np.ndarray:
    q = g.copy()
    rhos = [1.0 / float(s @ y) for s, y in zip(s_list, y_list)]
    alphas = []
    for s, y, r in zip(reversed(s_list), reversed(y_list), reversed(rhos)):
        a = r * float(s @ q)
        alphas.append(a)
        q -= a * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, r), a in zip(zip(s_list, y_list, rhos), reversed(alphas)):
        b = r * float(y @ q)
        q += (a - b) * s
    return q


def soft_threshold(x, thresh):
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


def fista_l1(fg, x0, weight: float, tol: float = 1e-10, max_iter: int = 20000, lipschitz: float = 1.0) -> OptimResult:
    """Accelerated proximal gradient for f(x) + weight * ||x||_1.

    Backtracking on the Lipschitz estimate and function-value restarts.
    Stops when the proximal-gradient mapping has norm below ``tol``.
    """
    x = np.array(x0, dtype=float)
    y = x.copy()
    L = lipschitz
    k_t = 1.0
    fx = fg(x)[0] + weight * np.abs(x).sum()
    status = "max_iter"
    it = 0
    gmap = np.inf
    for it in range(1, max_iter + 1):
        fy, gy = fg(y)
        while True:
            x_new = soft_threshold(y - gy / L, weight / L)
            d = x_new - y
            f_new = fg(x_new)[0]
            if f_new <= fy + gy @ d + 0.5 * L * (d @ d) + 1e-14 * abs(fy):
                break
            L *= 2.0
        gmap = L * float(np.linalg.norm(d))
        F_new = f_new + weight * np.abs(x_new).sum()
        if F_new > fx:
            # restart momentum
            y = x.copy()
            k_t = 1.0
            continue
        k_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * k_t * k_t))
        y = x_new + ((k_t - 1.0) / k_next) * (x_new - x)
        x, fx, k_t = x_new, F_new, k_next
        if gmap <= tol:
            status = "converged"
            break
        L *= 0.9
    return OptimResult(x, float(fx), float(gmap), it, status)


def monotone_root(fun, lo, hi, x0=None, ftol: float = 1e-12, xtol: float = 1e-15, max_iter: int = 200):
    """Elementwise root of increasing functions by safeguarded Newton.

    Parameters
    ----------
    fun : callable
        ``fun(x, idx) -> (f, df)`` evaluated on the entries ``idx`` still active.
        Each f must be increasing with f(lo) < 0 < f(hi).
    lo, hi : ndarray
        Brackets.
    x0 : ndarray, optional
        Starting points inside the brackets (midpoint otherwise).

    Returns
    -------
    x : ndarray
    resid : ndarray
        Final function values.
    converged : ndarray of bool
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    x = 0.5 * (lo + hi) if x0 is None else np.clip(np.array(x0, dtype=float), lo, hi)
    resid = np.full(x.shape, np.nan)
    done = np.zeros(x.shape, dtype=bool)
    active = np.arange(x.size)
    for _ in range(max_iter):
        if active.size == 0:
            break
        f, df = fun(x[active], active)
        resid[active] = f
        ok = np.abs(f) <= ftol
        done[active[ok]] = True
        neg = f < 0
        lo[active[neg]] = x[active[neg]]
        hi[active[~neg]] = x[active[~neg]]
        narrow = (hi[active] - lo[active]) <= xtol * np.maximum(1.0, np.abs(x[active]))
        done[active[narrow]] = True
        with np.errstate(divide="ignore", invalid="ignore"):
            step = f / df
            xn = x[active] - step
        tiny = np.abs(step) <= xtol * np.maximum(1.0, np.abs(x[active]))
        a_lo, a_hi = lo[active], hi[active]
        bad = ~np.isfinite(xn) | (xn <= a_lo) | (xn >= a_hi)
        xn = np.where(bad, 0.5 * (a_lo + a_hi), xn)
        x[active] = np.where(done[active], x[active], xn)
        # A negligible Newton step means the root is resolved to working precision.
        done[active[tiny & ~bad]] = True
        active = active[~done[active]]
    return x, resid, done
