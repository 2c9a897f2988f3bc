from __future__ import annotations

import math

import numpy as np
import pytest

from parametric_dro.errors import InvalidInputError
from parametric_dro.expfam import bernoulli, gaussian, poisson
from parametric_dro.oracle import _boundary_distance, finite_diff
from parametric_dro.solver import conditional_bounds, conditional_losses, inner_worst_case

# mpmath: mu_lo solves mu log mu - mu + 1 = 0.1; value = e - mu_lo; the gamma dual gives the same.
POISSON_INNER_VALUE = 2.1307422151862572514
POISSON_INNER_GAMMA = 1.8803651222058077870


def _dual_objective(spec, th, lam, rho, gamma):
    return gamma * (rho - spec.psi(th)) + gamma * spec.psi(th - lam / gamma) + spec.psi(lam)


def _brute_force(spec, th, lam, rho):
    """max Psi(lam) - lam mu over the ball by scanning its two endpoints."""
    vals = []
    for sign in (-1.0, 1.0):
        d = _boundary_distance(spec, th, rho, sign)
        grid = th + sign * d * np.linspace(0.0, 1.0, 2001)
        vals.append(np.max(spec.psi(lam) - lam * spec.grad(grid)))
    return max(vals)


class TestInnerWorstCase:
    def test_zero_radius(self):
        v, g = inner_worst_case(poisson(), 0.0, 1.0, 0.0)
        assert v == pytest.approx(math.e - 1.0, abs=1e-15)
        assert g == math.inf

    def test_zero_lambda(self):
        v, g = inner_worst_case(poisson(), 0.3, 0.0, 0.2)
        assert v == 1.0
        assert g == math.inf

    def test_poisson_reference(self):
        v, g = inner_worst_case(poisson(), 0.0, 1.0, 0.1)
        assert v == pytest.approx(POISSON_INNER_VALUE, abs=1e-10)
        assert g == pytest.approx(POISSON_INNER_GAMMA, rel=1e-9)

    def test_matches_scalar_dual(self, rng, family):
        # value equals the one-dimensional dual objective at gamma*
        for _ in range(30):
            th, lam = rng.normal(scale=1.5, size=2)
            rho = rng.uniform(1e-3, 0.5)
            v, g = inner_worst_case(family, th, lam, rho)
            if 0 < g < np.inf:
                assert _dual_objective(family, th, lam, rho, g) == pytest.approx(v, abs=1e-9)
                for gg in (0.5 * g, 0.9 * g, 1.1 * g, 2.0 * g):
                    assert _dual_objective(family, th, lam, rho, gg) >= v - 1e-10

    def test_matches_brute_force(self, rng, family):
        for _ in range(30):
            th, lam = rng.normal(scale=1.5, size=2)
            rho = rng.uniform(1e-3, 0.5)
            v, _ = inner_worst_case(family, th, lam, rho)
            assert v == pytest.approx(_brute_force(family, th, lam, rho), abs=1e-6)

    def test_saturated_bernoulli(self):
        # KL to the point mass at 0 is Psi(theta_hat) = log 2 < rho: the adversary reaches it
        v, g = inner_worst_case(bernoulli(), 0.0, 2.0, 1.0)
        assert g == 0.0
        assert v == pytest.approx(float(bernoulli().psi(2.0)), abs=1e-15)

    def test_monotone_in_rho(self, rng, family):
        for _ in range(20):
            th, lam = rng.normal(scale=1.5, size=2)
            vals = [inner_worst_case(family, th, lam, r)[0] for r in np.linspace(0.0, 1.0, 11)]
            assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_square_root_rate_at_zero(self, rng, family):
        # value(rho) - value(0) ~ |lam| sqrt(2 rho Psi''(theta_hat)) as rho -> 0
        rho = 1e-10
        for _ in range(20):
            th, lam = rng.normal(scale=1.5, size=2)
            diff = inner_worst_case(family, th, lam, rho)[0] - inner_worst_case(family, th, lam, 0.0)[0]
            lead = abs(lam) * np.sqrt(2.0 * rho * family.hess(th))
            assert diff == pytest.approx(lead, rel=1e-3)

    def test_invalid_rho(self):
        with pytest.raises(InvalidInputError):
            inner_worst_case(poisson(), 0.0, 1.0, -0.1)


class TestBounds:
    def test_endpoint_kl_equals_rho(self, rng, family):
        th = rng.normal(scale=2.0, size=50)
        rho = rng.uniform(1e-4, 1.0, 50)
        cb = conditional_bounds(family, th, rho)
        for d, sign in ((cb.d_lo, -1.0), (cb.d_hi, 1.0)):
            fin = np.isfinite(d)
            kl = family.kl(th[fin] + sign * d[fin], th[fin])
            np.testing.assert_allclose(kl, rho[fin], atol=1e-10)

    def test_extreme_natural_parameters(self):
        cb = conditional_bounds(bernoulli(), [620.0, -620.0], [0.5, 0.5])
        kl = bernoulli().kl(np.array([620.0 - cb.d_lo[0], -620.0 + cb.d_hi[1]]), np.array([620.0, -620.0]))
        np.testing.assert_allclose(kl, 0.5, atol=1e-10)
        cb = conditional_bounds(poisson(), [30.0], [0.1])
        assert poisson().kl(30.0 + cb.d_hi[0], 30.0) == pytest.approx(0.1, rel=1e-6)


class TestSmoothedLosses:
    def _setup(self, rng, family, C=6):
        th = rng.normal(scale=1.0, size=C)
        rho = rng.uniform(0.0, 0.3, C)
        rho[0] = 0.0
        return conditional_bounds(family, th, rho), rho

    def test_sandwich(self, rng, family):
        cb, rho = self._setup(rng, family)
        for tau in (1e-1, 1e-3, 1e-6):
            lam = rng.normal(size=rho.size)
            lam[1] = 0.0
            exact = conditional_losses(cb, lam).t
            smooth = conditional_losses(cb, lam, tau).t
            assert np.all(smooth >= exact - 1e-12)
            assert np.all(smooth <= exact + 2 * tau * np.sqrt(rho) + 1e-12)

    def test_derivatives(self, rng, family):
        cb, rho = self._setup(rng, family)
        tau = 0.05
        for _ in range(5):
            lam = rng.normal(size=rho.size)
            out = conditional_losses(cb, lam, tau)
            for c in range(rho.size):
                def t_c(z, c=c):
                    lam2 = lam.copy()
                    lam2[c] = z
                    return conditional_losses(cb, lam2, tau).t[c]

                def dt_c(z, c=c):
                    lam2 = lam.copy()
                    lam2[c] = z
                    return conditional_losses(cb, lam2, tau).dt[c]

                assert finite_diff(t_c, lam[c]) == pytest.approx(out.dt[c], rel=1e-6, abs=1e-8)
                assert finite_diff(dt_c, lam[c]) == pytest.approx(out.d2t[c], rel=1e-5, abs=1e-7)
