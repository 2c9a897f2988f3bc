"""Plain and penalised maximum likelihood for exponential-family GLMs."""

from __future__ import annotations

import enum
import warnings

import numpy as np

from ..dataio import Dataset, GroupedDataset
from ..errors import ConfigError, InvalidInputError, UnboundedMLEWarning
from ..expfam import ExpFamilySpec, FamilyId, LinearParamMap
from .optim import OptimResult, SmoothConvexConfig, fista_l1, lbfgs_minimize, newton_minimize


class Penalty(str, enum.Enum):
    L1 = "l1"
    L2 = "l2"


def design(data) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rows, row weights summing to one, and sufficient-statistic targets."""
    if isinstance(data, GroupedDataset):
        return data.x_hat, data.p_hat, data.t_mean
    if isinstance(data, Dataset):
        n = data.n_samples
        return data.x, np.full(n, 1.0 / n), data.t_y
    raise InvalidInputError(f"expected Dataset or GroupedDataset, got {type(data).__name__}")


def glm_loss(spec: ExpFamilySpec, X, p, y):
    """Return ``fgh(w, order)`` for the weighted average log-loss."""

    def fgh(w, order: int = 2):
        lam = X @ w
        f = float(p @ (spec.psi(lam) - y * lam))
        if order == 0:
            return f
        g = X.T @ (p * (spec.grad(lam) - y))
        if order == 1:
            return f, g
        return f, g, (X * (p * spec.hess(lam))[:, None]).T @ X

    return fgh


def _recession_slope(spec: ExpFamilySpec, X, p, y, direction) -> float:
    z = X @ direction
    tiny = 1e-9 * max(1.0, float(np.abs(z).max()))
    z = np.where(np.abs(z) <= tiny, 0.0, z)
    fid = spec.family_id
    if fid is FamilyId.BERNOULLI:
        rec = np.maximum(z, 0.0)
    elif fid is FamilyId.POISSON:
        rec = np.where(z > 0, np.inf, 0.0)
    else:
        rec = np.where(z != 0, np.inf, 0.0)
    return float(p @ (rec - y * z))


def looks_unbounded(spec: ExpFamilySpec, X, p, y, w, min_norm: float = 10.0) -> bool:
    """Heuristic: large iterate along which the loss does not grow asymptotically."""
    r = float(np.linalg.norm(w))
    if r < min_norm:
        return False
    return _recession_slope(spec, X, p, y, w / r) <= 1e-10


def _minimize(fgh, x0, cfg: SmoothConvexConfig) -> OptimResult:
    if cfg.method == "lbfgs":
        return lbfgs_minimize(lambda w: fgh(w, 1), x0, cfg)
    return newton_minimize(fgh, x0, cfg, fun=lambda w: fgh(w, 0))


def _finish(spec, X, p, y, res: OptimResult) -> OptimResult:
    if looks_unbounded(spec, X, p, y, res.x):
        res.status = "unbounded"
        warnings.warn("log-likelihood appears unbounded (no finite MLE); returning the last iterate",
                      UnboundedMLEWarning, stacklevel=3)
    return res


def fit_mle_report(spec: ExpFamilySpec, data, param_map: LinearParamMap | None = None,
                   config: SmoothConvexConfig | None = None, w0=None) -> OptimResult:
    cfg = config or SmoothConvexConfig()
    X, p, y = design(data)
    x0 = np.zeros(X.shape[1]) if w0 is None else np.asarray(w0, dtype=float)
    return _finish(spec, X, p, y, _minimize(glm_loss(spec, X, p, y), x0, cfg))


def fit_mle(spec: ExpFamilySpec, data, param_map: LinearParamMap | None = None,
            config: SmoothConvexConfig | None = None, w0=None) -> np.ndarray:
    """Minimiser of the average log-loss over a Dataset or GroupedDataset.

    Emits :class:`UnboundedMLEWarning` when the likelihood has no maximiser
    (for example separable logistic data); the last iterate is returned.
    """
    return fit_mle_report(spec, data, param_map, config, w0).x


def fit_penalized_mle(spec: ExpFamilySpec, data, param_map: LinearParamMap | None = None,
                      penalty: Penalty | str = Penalty.L2, weight: float = 0.0,
                      config: SmoothConvexConfig | None = None, w0=None) -> np.ndarray:
    """Average log-loss plus ``weight * ||w||_1`` or ``weight * ||w||_2^2``."""
    penalty = Penalty(penalty)
    if not (np.isfinite(weight) and weight >= 0):
        raise ConfigError("penalty weight must be finite and >= 0")
    cfg = config or SmoothConvexConfig()
    X, p, y = design(data)
    base = glm_loss(spec, X, p, y)
    x0 = np.zeros(X.shape[1]) if w0 is None else np.asarray(w0, dtype=float)
    if weight == 0:
        return _finish(spec, X, p, y, _minimize(base, x0, cfg)).x
    if penalty is Penalty.L2:
        def fgh(w, order=2):
            out = base(w, order)
            reg = weight * float(w @ w)
            if order == 0:
                return out + reg
            if order == 1:
                return out[0] + reg, out[1] + 2 * weight * w
            return out[0] + reg, out[1] + 2 * weight * w, out[2] + 2 * weight * np.eye(w.size)
        return _minimize(fgh, x0, cfg).x
    return _l1_fit(base, x0, weight, cfg)


def _l1_fit(base, x0, weight: float, cfg: SmoothConvexConfig) -> np.ndarray:
    res = fista_l1(lambda w: base(w, 1), x0, weight, tol=1e-10, max_iter=20 * cfg.max_iter + 5000)
    w = res.x
    support = np.flatnonzero(w)
    if support.size == 0:
        return w
    # Newton polish on the active set with the signs frozen.
    sgn = np.sign(w[support])

    def restricted(v, order=2):
        full = np.zeros_like(w)
        full[support] = v
        out = base(full, order)
        if order == 0:
            return out + weight * float(sgn @ v)
        if order == 1:
            return out[0] + weight * float(sgn @ v), out[1][support] + weight * sgn
        return (out[0] + weight * float(sgn @ v), out[1][support] + weight * sgn,
                out[2][np.ix_(support, support)])

    pol = newton_minimize(restricted, w[support], cfg, fun=lambda v: restricted(v, 0))
    cand = np.zeros_like(w)
    cand[support] = pol.x
    g = base(cand, 1)[1]
    off = np.setdiff1d(np.arange(w.size), support)
    kkt = np.all(np.abs(g[off]) <= weight * (1 + 1e-6) + 1e-9)
    if pol.status == "converged" and np.all(np.sign(pol.x) == sgn) and kkt:
        return cand
    return w
