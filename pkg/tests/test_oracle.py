from __future__ import annotations

import math

import numpy as np
import pytest
from conftest import random_problem

from parametric_dro.errors import InvalidInputError, TailBoundWarning
from parametric_dro.expfam import bernoulli, gaussian, poisson
from parametric_dro.oracle import (
    _boundary_distance,
    finite_diff,
    kl_series,
    lemma44_monte_carlo,
    sampled_adversary_bound,
    simplex_kl_maximize,
)
from parametric_dro.solver import dro_objective, nominal_expected_loss

KL_POISSON_LOG2_0 = 0.38629436111989061883


class TestFiniteDiff:
    def test_quadratic(self, rng):
        A = rng.standard_normal((3, 3))
        x = rng.standard_normal(3)
        np.testing.assert_allclose(finite_diff(lambda z: z @ A @ z, x), (A + A.T) @ x, atol=1e-8)

    def test_scalar_log_partition(self):
        assert finite_diff(lambda z: float(poisson().psi(z)), 0.7) == pytest.approx(math.exp(0.7), rel=1e-9)


class TestKlSeries:
    def test_reference(self):
        assert kl_series(poisson(), math.log(2.0), 0.0) == pytest.approx(KL_POISSON_LOG2_0, abs=1e-12)

    def test_matches_closed_form(self, rng):
        for spec in (poisson(), bernoulli()):
            for a, b in rng.normal(size=(10, 2)):
                assert kl_series(spec, a, b) == pytest.approx(float(spec.kl(a, b)), abs=1e-10)

    def test_short_truncation_warns(self):
        with pytest.warns(TailBoundWarning):
            kl_series(poisson(), 3.0, 0.0, truncation=20)

    def test_gaussian_rejected(self):
        with pytest.raises(InvalidInputError):
            kl_series(gaussian(), 0.0, 1.0)


class TestBoundaryDistance:
    def test_kl_on_boundary(self, family):
        for sign in (-1.0, 1.0):
            d = _boundary_distance(family, 0.3, 0.2, sign)
            if np.isfinite(d):
                assert float(family.kl(0.3 + sign * d, 0.3)) == pytest.approx(0.2, abs=1e-10)


class TestSimplex:
    def test_closed_form_two_points(self):
        # q2 from the mpmath reference for p=(1/2,1/2), eps=0.1
        assert simplex_kl_maximize([0.5, 0.5], [0.0, 0.0], 0.1, [1.0, 3.0]) == pytest.approx(
            1.0 + 2 * 0.71979462616140973122, abs=1e-10)

    def test_size_limit(self):
        with pytest.raises(InvalidInputError):
            simplex_kl_maximize(np.full(11, 1 / 11), 0.0, 0.1, np.zeros(11))


class TestSampledAdversary:
    def test_between_nominal_and_objective(self, rng, family):
        prob = random_problem(rng, family)
        w = rng.standard_normal(prob.w_dim)
        s = sampled_adversary_bound(prob, w, 300, seed=0)
        assert nominal_expected_loss(prob, w) - 1e-12 <= s <= dro_objective(prob, w) + 1e-10

    def test_deterministic(self, rng):
        prob = random_problem(rng, poisson())
        w = rng.standard_normal(prob.w_dim)
        assert sampled_adversary_bound(prob, w, 100, seed=7) == sampled_adversary_bound(prob, w, 100, seed=7)


class TestMonteCarlo:
    @pytest.mark.parametrize("spec,theta", [(poisson(), 0.5), (bernoulli(), -0.3)], ids=["poisson", "bernoulli"])
    def test_half_chi_square_mean(self, spec, theta):
        r = lemma44_monte_carlo(spec, theta, N_c=500, reps=400, seed=1)
        assert abs(r.mean - 0.5) <= 4 * r.stderr + 0.02

    def test_clamping_counted(self):
        r = lemma44_monte_carlo(poisson(), -4.0, N_c=5, reps=200, seed=0)
        assert r.n_clamped > 0

    def test_invalid(self):
        with pytest.raises(InvalidInputError):
            lemma44_monte_carlo(poisson(), 0.0, N_c=0)
