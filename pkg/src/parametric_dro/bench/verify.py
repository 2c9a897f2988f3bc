"""Fixed-seed oracle checks behind the ``verify`` subcommand."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..dataio import Dataset, GroupedDataset, group
from ..errors import ConfigError, TailBoundWarning
from ..expfam import bernoulli, gaussian, kl_divergence, poisson
from ..nominal import AmbiguityRadii, build_mle_fit, build_moment_match
from ..oracle import finite_diff, kl_series, sampled_adversary_bound, simplex_kl_maximize
from ..solver import DroProblem, dro_gradient, dro_objective, fit_mle, kl_dro_objective, solve_dro, support_function
from ..worstcase import assemble

DEFAULT_TOLERANCES = {
    "kl_closed_form": 1e-8,
    "support_vs_simplex": 1e-8,
    "support_translation": 1e-9,
    "duality_sandwich": 1e-9,
    "worst_case_attainment": 1e-6,
    "gradient_fd": 1e-5,
    "mle_recovery": 1e-5,
    "reweighting_equivalence": 1e-8,
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: error={self.error:.3e} tol={self.tolerance:.1e}"


@dataclass(frozen=True)
class VerifyReport:
    results: tuple

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list:
        return [r.line() for r in self.results]


def _random_problem(rng, family, max_groups: int = 5, max_dim: int = 3, rho_max: float = 0.2):
    C = int(rng.integers(2, max_groups + 1))
    n = int(rng.integers(1, max_dim + 1))
    x = rng.standard_normal((C, n))
    theta = x @ rng.normal(scale=0.7, size=n)
    counts = rng.integers(2, 10, size=C)
    g = GroupedDataset.from_arrays(x, counts, family.grad(theta), family)
    nominal = build_moment_match(g)
    rho = rng.uniform(0.0, rho_max, size=C)
    eps = float(g.p_hat @ rho) * rng.uniform(1.0, 3.0) + rng.uniform(0.0, 0.05)
    return DroProblem(family, nominal, AmbiguityRadii(eps, rho))


def _check_kl(rng) -> float:
    err = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TailBoundWarning)
        for fam, scale in ((poisson(), 1.5), (bernoulli(), 3.0)):
            for _ in range(100):
                a, b = rng.normal(scale=scale, size=2)
                err = max(err, abs(kl_divergence(fam, a, b) - kl_series(fam, a, b)))
    return err


def _check_support(rng) -> float:
    err = 0.0
    for _ in range(20):
        C = int(rng.integers(2, 7))
        p = rng.dirichlet(np.ones(C))
        rho = rng.uniform(0, 0.2, C)
        eps = float(p @ rho) + rng.uniform(0, 1.0)
        t = rng.normal(size=C)
        err = max(err, abs(support_function(p, rho, eps, t)[0] - simplex_kl_maximize(p, rho, eps, t)))
    return err


def _check_translation(rng) -> float:
    err = 0.0
    for _ in range(20):
        C = int(rng.integers(2, 7))
        p = rng.dirichlet(np.ones(C))
        rho = rng.uniform(0, 0.2, C)
        eps = float(p @ rho) + rng.uniform(0, 1.0)
        t = rng.normal(size=C)
        c = rng.normal(scale=5.0)
        err = max(err, abs(support_function(p, rho, eps, t + c)[0] - support_function(p, rho, eps, t)[0] - c))
    return err


def _check_sandwich(rng, samples: int = 20_000) -> float:
    """Largest amount by which a sampled member of the set beats the solver."""
    err = 0.0
    for k in range(4):
        pr = _random_problem(rng, (poisson(), bernoulli())[k % 2])
        sol = solve_dro(pr)
        bound = sampled_adversary_bound(pr, sol.w_star, num_samples=samples, seed=k)
        err = max(err, bound - sol.objective)
    return max(err, 0.0)


def _check_attainment(rng) -> float:
    err = 0.0
    for k in range(6):
        pr = _random_problem(rng, (poisson(), bernoulli(), gaussian(1.0))[k % 3])
        sol = solve_dro(pr)
        wc = assemble(pr, sol.w_star)
        err = max(err, abs(wc.attained_objective - sol.objective))
    return err


def _check_gradient(rng) -> float:
    err = 0.0
    for k in range(6):
        pr = _random_problem(rng, (poisson(), bernoulli(), gaussian(0.5))[k % 3])
        w = rng.normal(size=pr.w_dim)
        g = dro_gradient(pr, w)
        fd = finite_diff(lambda z: dro_objective(pr, z), w)
        err = max(err, float(np.max(np.abs(g - fd)) / max(1.0, float(np.max(np.abs(g))))))
    return err


def _check_mle_recovery(rng) -> float:
    err = 0.0
    for k in range(6):
        fam = (poisson(), bernoulli())[k % 2]
        C, n = int(rng.integers(3, 7)), int(rng.integers(1, 3))
        x = rng.standard_normal((C, n))
        mu = fam.grad(x @ rng.normal(scale=0.5, size=n) + rng.normal(scale=0.3, size=C))
        g = GroupedDataset.from_arrays(x, rng.integers(2, 9, size=C), mu, fam)
        w_mle = fit_mle(fam, g)
        for nominal in (build_moment_match(g), build_mle_fit(g, w_mle)):
            pr = DroProblem(fam, nominal, AmbiguityRadii(0.0, np.zeros(C)))
            err = max(err, float(np.linalg.norm(solve_dro(pr).w_star - w_mle)))
    return err


def interior_dataset(rng, family, N: int, n: int) -> Dataset:
    """Distinct Gaussian covariates with responses strictly inside the mean domain."""
    x = rng.standard_normal((N, n))
    theta = x @ rng.normal(scale=0.5, size=n)
    y = family.sample(theta, rng).astype(float)
    if family.mean_domain[0] == 0.0:
        y = y + 1.0
    return Dataset(x, y, family)


def _check_reweighting(rng) -> float:
    err = 0.0
    for k in range(4):
        fam = (poisson(), gaussian(1.0))[k % 2]
        ds = interior_dataset(rng, fam, int(rng.integers(6, 15)), int(rng.integers(1, 3)))
        eps = float(rng.uniform(0.01, 0.5))
        pr = DroProblem(fam, build_moment_match(group(ds)), AmbiguityRadii(eps, np.zeros(ds.n_samples)))
        w = rng.normal(size=ds.n_features)
        err = max(err, abs(dro_objective(pr, w) - kl_dro_objective(fam, ds, w, eps)))
    return err


CHECKS = {
    "kl_closed_form": _check_kl,
    "support_vs_simplex": _check_support,
    "support_translation": _check_translation,
    "duality_sandwich": _check_sandwich,
    "worst_case_attainment": _check_attainment,
    "gradient_fd": _check_gradient,
    "mle_recovery": _check_mle_recovery,
    "reweighting_equivalence": _check_reweighting,
}


def run_verify(config=None) -> VerifyReport:
    """Run the oracle checks on fixed seeds.

    ``config`` may be an :class:`ExperimentConfig` or None.  Its
    ``tolerances`` override :data:`DEFAULT_TOLERANCES` and ``checks``
    selects a subset.
    """
    tolerances = dict(DEFAULT_TOLERANCES)
    names = list(CHECKS)
    seed = 0
    if config is not None:
        overrides = dict(config.tolerances)
        unknown = set(overrides) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise ConfigError(f"unknown tolerance keys: {sorted(unknown)}")
        try:
            tolerances.update({k: float(v) for k, v in overrides.items()})
        except (TypeError, ValueError):
            raise ConfigError("tolerances must be numbers") from None
        if config.checks is not None:
            bad = set(config.checks) - set(CHECKS)
            if bad or not config.checks:
                raise ConfigError(f"checks must be a nonempty subset of {sorted(CHECKS)}")
            names = [n for n in CHECKS if n in config.checks]
        seed = config.seed
    results = []
    for i, name in enumerate(names):
        rng = np.random.default_rng([seed, i])
        results.append(CheckResult(name, float(CHECKS[name](rng)), tolerances[name]))
    return VerifyReport(tuple(results))
