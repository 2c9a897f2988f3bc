from __future__ import annotations

import numpy as np
import pytest

from parametric_dro.dataio import GroupedDataset
from parametric_dro.expfam import bernoulli, gaussian, poisson
from parametric_dro.nominal import AmbiguityRadii, build_moment_match
from parametric_dro.solver import DroProblem

FAMILIES = {"poisson": poisson(), "bernoulli": bernoulli(), "gaussian": gaussian(1.5)}

# (criterion number, passed, detail) rows filled by test_acceptance.py
ACCEPTANCE_LINES: list = []


def report_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=sorted(FAMILIES))
def family(request):
    return FAMILIES[request.param]


def random_problem(rng, family, C=None, n=None, rho_max=0.2, eps_slack=(1.0, 3.0)):
    """Small moment-matched problem with interior group means."""
    C = int(rng.integers(2, 6)) if C is None else C
    n = int(rng.integers(1, 4)) if n is None else n
    x = rng.standard_normal((C, n))
    theta = x @ rng.normal(scale=0.7, size=n)
    counts = rng.integers(2, 10, size=C)
    g = GroupedDataset.from_arrays(x, counts, family.grad(theta), family)
    nominal = build_moment_match(g)
    rho = rng.uniform(0.0, rho_max, size=C)
    eps = float(g.p_hat @ rho) * rng.uniform(*eps_slack) + rng.uniform(0.0, 0.05)
    return DroProblem(family, nominal, AmbiguityRadii(eps, rho))


def write_breast_cancer_csv(path):
    """sklearn's bundled Wisconsin diagnostic data as a numeric CSV with a 0/1 label column."""
    from sklearn.datasets import load_breast_cancer

    bunch = load_breast_cancer()
    names = [f"f{j}" for j in range(bunch.data.shape[1])]
    rows = np.column_stack([bunch.data, bunch.target])
    np.savetxt(path, rows, delimiter=",", header=",".join(names + ["label"]), comments="", fmt="%.10g")
    return path


def write_synthetic_logistic_csv(path, seed=0, N=400, n=6):
    """Overlapping-class logistic data so the likelihood has a finite maximiser."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((N, n))
    w0 = rng.normal(scale=0.8, size=n)
    y = (rng.random(N) < 1.0 / (1.0 + np.exp(-(x @ w0 + 0.3)))).astype(int)
    names = [f"x{j}" for j in range(n)]
    np.savetxt(path, np.column_stack([x, y]), delimiter=",", header=",".join(names + ["label"]), comments="",
               fmt="%.10g")
    return path
