from __future__ import annotations

import math

import numpy as np
import pytest

from parametric_dro.dataio import GroupedDataset
from parametric_dro.errors import ConfigError, RadiiInfeasibleError
from parametric_dro.expfam import bernoulli, poisson
from parametric_dro.nominal import (
    AmbiguityRadii,
    Construction,
    Explicit,
    Multiple,
    NominalDistribution,
    build_mle_fit,
    build_moment_match,
    check_mle_compatibility,
    joint_kl,
    marginal_divergence,
    radii_from_rate,
)
from parametric_dro.oracle import _boundary_distance
from parametric_dro.solver import fit_mle

LOG3 = 1.0986122886681096914


def _grouped(family, x, counts, t_mean):
    return GroupedDataset.from_arrays(x, counts, t_mean, family)


def _random_grouped(rng, family, C=5, n=2):
    x = rng.standard_normal((C, n))
    mu = family.grad(x @ rng.normal(scale=0.5, size=n) + rng.normal(scale=0.3, size=C))
    return _grouped(family, x, rng.integers(2, 9, size=C), mu)


class TestMomentMatch:
    def test_poisson(self):
        nom = build_moment_match(_grouped(poisson(), [[1.0]], [4], [3.0]))
        assert nom.theta_hat[0] == pytest.approx(math.log(3.0))
        assert nom.construction is Construction.MOMENT_MATCH

    def test_bernoulli(self):
        nom = build_moment_match(_grouped(bernoulli(), [[1.0]], [4], [0.75]))
        assert nom.theta_hat[0] == pytest.approx(LOG3, abs=1e-14)

    def test_poisson_clamp(self):
        nom = build_moment_match(_grouped(poisson(), [[1.0]], [2], [0.0]), clamp_tau=0.5)
        assert nom.theta_hat[0] == pytest.approx(math.log(0.25))
        assert nom.clamped[0]

    def test_bernoulli_two_sided_clamp(self):
        nom = build_moment_match(_grouped(bernoulli(), [[1.0], [2.0]], [4, 5], [0.0, 1.0]))
        np.testing.assert_allclose(nom.mu_hat, [0.5 / 4, 1 - 0.5 / 5])
        assert nom.clamped.all()

    def test_interior_means_untouched(self):
        nom = build_moment_match(_grouped(poisson(), [[1.0]], [2], [0.1]))
        assert nom.theta_hat[0] == pytest.approx(math.log(0.1))
        assert not nom.clamped[0]

    def test_clamp_tau_positive(self):
        with pytest.raises(ConfigError):
            build_moment_match(_grouped(poisson(), [[1.0]], [2], [1.0]), clamp_tau=0.0)

    def test_weights_are_p_hat(self, rng):
        g = _random_grouped(rng, poisson())
        np.testing.assert_array_equal(build_moment_match(g).p_hat, g.p_hat)


class TestMleFit:
    def test_zero_weights(self):
        g = _grouped(poisson(), [[1.0, 2.0], [0.5, -1.0]], [1, 1], [1.0, 2.0])
        np.testing.assert_array_equal(build_mle_fit(g, [0.0, 0.0]).theta_hat, 0.0)

    def test_single_group_agrees_with_moment_match(self):
        g = _grouped(poisson(), [[1.0]], [3], [3.0])
        w = fit_mle(poisson(), g)
        assert w[0] == pytest.approx(math.log(3.0), abs=1e-10)
        assert build_mle_fit(g, w).theta_hat[0] == pytest.approx(build_moment_match(g).theta_hat[0], abs=1e-10)

    def test_inner_products(self, rng):
        g = _random_grouped(rng, poisson(), C=2, n=3)
        w = rng.standard_normal(3)
        expected = [sum(g.x_hat[c, j] * w[j] for j in range(3)) for c in range(2)]
        np.testing.assert_allclose(build_mle_fit(g, w).theta_hat, expected, atol=1e-14)


class TestCompatibility:
    @pytest.mark.parametrize("family", [poisson(), bernoulli()], ids=["poisson", "bernoulli"])
    def test_both_constructions(self, family, rng):
        for _ in range(5):
            g = _random_grouped(rng, family)
            assert check_mle_compatibility(build_moment_match(g), tol=1e-4)
            assert check_mle_compatibility(build_mle_fit(g, fit_mle(family, g)), tol=1e-4)

    def test_perturbed_fails(self, rng):
        g = _random_grouped(rng, poisson())
        nom = build_moment_match(g)
        th = nom.theta_hat.copy()
        th[0] += 1.0
        bad = NominalDistribution(g, th, Construction.MOMENT_MATCH, nom.clamped)
        assert not check_mle_compatibility(bad, tol=1e-4)


class TestRadii:
    def test_zero_rate(self):
        r = radii_from_rate(_grouped(poisson(), [[1.0], [2.0]], [2, 1], [1.0, 1.0]), 0.0, Multiple(2.0))
        np.testing.assert_array_equal(r.rho, 0.0)
        assert r.epsilon == 0.0

    def test_example(self):
        r = radii_from_rate(_grouped(poisson(), [[1.0], [2.0]], [2, 1], [1.0, 1.0]), 1.0, Multiple(2.0))
        np.testing.assert_allclose(r.rho, [0.5, 1.0])
        assert r.epsilon == pytest.approx(4.0 / 3.0)

    def test_explicit_infeasible(self):
        g = _grouped(poisson(), [[1.0], [2.0]], [2, 1], [1.0, 1.0])
        with pytest.raises(RadiiInfeasibleError):
            radii_from_rate(g, 1.0, Explicit(0.5))
        assert radii_from_rate(g, 1.0, Explicit(1.0)).epsilon == 1.0

    def test_kappa_at_least_one(self):
        with pytest.raises(ConfigError):
            Multiple(0.5)

    def test_negative_rejected(self):
        with pytest.raises(ConfigError):
            radii_from_rate(_grouped(poisson(), [[1.0]], [2], [1.0]), -1.0)


class TestSetInclusion:
    def test_sampled_members_satisfy_joint_budget(self, rng):
        spec = poisson()
        for _ in range(20):
            g = _random_grouped(rng, spec, C=4)
            nom = build_moment_match(g)
            rho = rng.uniform(0.0, 0.2, 4)
            eps = float(g.p_hat @ rho) + rng.uniform(0.0, 0.3)
            radii = AmbiguityRadii(eps, rho)
            # conditional: random point inside each ball
            theta = np.empty(4)
            for c in range(4):
                sign = rng.choice([-1.0, 1.0])
                theta[c] = nom.theta_hat[c] + sign * rng.random() * _boundary_distance(spec, nom.theta_hat[c],
                                                                                     rho[c], sign)
            # marginal: shrink a random q towards p_hat until feasible
            q = rng.dirichlet(np.ones(4))
            for lam in np.linspace(1.0, 0.0, 101):
                mix = lam * q + (1 - lam) * g.p_hat
                if marginal_divergence(mix, g.p_hat, radii.rho) <= eps:
                    break
            assert joint_kl(spec, g.p_hat, nom.theta_hat, mix, theta) <= eps + 1e-10
