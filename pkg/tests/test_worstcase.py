from __future__ import annotations

import json
import math

import numpy as np
import pytest
from conftest import random_problem

from parametric_dro.errors import InvalidInputError, RadiiInfeasibleError
from parametric_dro.expfam import bernoulli, poisson
from parametric_dro.nominal import marginal_divergence
from parametric_dro.oracle import sampled_adversary_bound
from parametric_dro.solver import dro_objective, inner_worst_case, solve_dro
from parametric_dro.worstcase import assemble, worst_conditional, worst_conditionals, worst_marginal

# mpmath reference, Poisson theta_hat=0, lambda=1, rho=0.1
THETA_STAR = -0.53181160838961202015
GAMMA_STAR = 1.8803651222058077870
SUPPORT_Q2 = 0.71979462616140973122


class TestConditional:
    def test_reference(self):
        th, g, t = worst_conditional(poisson(), 0.0, 1.0, 0.1)
        assert th == pytest.approx(THETA_STAR, abs=1e-10)
        assert g == pytest.approx(GAMMA_STAR, rel=1e-9)
        assert t == pytest.approx(inner_worst_case(poisson(), 0.0, 1.0, 0.1)[0], abs=1e-12)

    def test_zero_radius_and_lambda(self):
        assert worst_conditional(poisson(), 0.4, 1.0, 0.0)[0] == 0.4
        assert worst_conditional(poisson(), 0.4, 0.0, 0.3)[0] == 0.4

    def test_properties(self, rng, family):
        C = 40
        th = rng.normal(scale=1.5, size=C)
        lam = rng.normal(scale=1.5, size=C)
        rho = rng.uniform(1e-3, 0.5, C)
        th_s, gam, t_s, resid = worst_conditionals(family, th, lam, rho)
        fin = np.isfinite(th_s)
        assert np.max(np.abs(resid[fin])) <= 1e-10
        np.testing.assert_allclose(family.kl(th_s[fin], th[fin]), rho[fin], atol=1e-8)
        # adversary moves the mean against the sign of lambda
        assert np.all(np.sign(th_s[fin] - th[fin]) == -np.sign(lam[fin]))
        inner = np.array([inner_worst_case(family, a, b, r)[0] for a, b, r in zip(th, lam, rho)])
        np.testing.assert_allclose(t_s, inner, atol=1e-10)

    def test_saturated_bernoulli(self):
        th, g, t = worst_conditional(bernoulli(), 0.0, 2.0, 1.0)
        assert th == -math.inf and g == 0.0
        assert t == pytest.approx(float(bernoulli().psi(2.0)))

    def test_negative_rho(self):
        with pytest.raises(InvalidInputError):
            worst_conditional(poisson(), 0.0, 1.0, -1.0)


class TestMarginal:
    def test_reference(self):
        m = worst_marginal([0.5, 0.5], [0.0, 0.0], 0.1, [1.0, 3.0])
        assert m.q[1] == pytest.approx(SUPPORT_Q2, abs=1e-10)
        assert m.limit is None
        assert abs(m.resid_alpha) <= 1e-10 and abs(m.resid_beta) <= 1e-10

    def test_singleton(self):
        m = worst_marginal([0.3, 0.7], [0.0, 0.0], 0.0, [1.0, 3.0])
        np.testing.assert_allclose(m.q, [0.3, 0.7])
        assert m.limit == "beta_inf"

    def test_vertex(self):
        m = worst_marginal([0.5, 0.5], [0.0, 0.0], 10.0, [1.0, 3.0])
        np.testing.assert_allclose(m.q, [0.0, 1.0])
        assert m.limit == "beta_zero"
        assert m.value == 3.0

    def test_ties_split_mass(self):
        m = worst_marginal([0.2, 0.3, 0.5], [0.0, 0.0, 0.0], 10.0, [3.0, 3.0, 1.0])
        np.testing.assert_allclose(m.q, [0.4, 0.6, 0.0])

    def test_random(self, rng):
        for _ in range(30):
            C = int(rng.integers(2, 8))
            p = rng.dirichlet(np.ones(C))
            rho = rng.uniform(0.0, 0.3, C)
            eps = float(p @ rho) + rng.uniform(0.01, 1.0)
            t = rng.normal(size=C)
            m = worst_marginal(p, rho, eps, t)
            assert abs(m.resid_alpha) <= 1e-8
            assert abs(m.resid_beta) <= 1e-8
            assert marginal_divergence(m.q, p, rho) <= eps + 1e-8
            assert float(m.q @ t) == pytest.approx(m.value, abs=1e-10)

    def test_infeasible(self):
        with pytest.raises(RadiiInfeasibleError):
            worst_marginal([0.5, 0.5], [1.0, 1.0], 0.5, [0.0, 1.0])


class TestAssemble:
    def test_attains_objective_and_budget(self, rng, family):
        for _ in range(5):
            prob = random_problem(rng, family)
            w = solve_dro(prob).w_star
            wc = assemble(prob, w)
            assert wc.attained_objective == pytest.approx(dro_objective(prob, w), abs=1e-8)
            assert wc.joint_kl() <= prob.radii.epsilon + 1e-8
            assert np.all(wc.conditional_kl() <= prob.radii.rho + 1e-8)
            assert wc.q_star.sum() == pytest.approx(1.0, abs=1e-12)

    def test_dominates_sampled_adversaries(self, rng, family):
        prob = random_problem(rng, family)
        w = rng.standard_normal(prob.w_dim)
        assert assemble(prob, w).attained_objective >= sampled_adversary_bound(prob, w, 500, seed=3) - 1e-10

    def test_json_round_trip(self, rng):
        prob = random_problem(rng, bernoulli(), rho_max=2.0)
        w = 5.0 * rng.standard_normal(prob.w_dim)
        doc = json.loads(assemble(prob, w).to_json())
        assert doc["family"] == "bernoulli"
        assert len(doc["theta_star"]) == prob.nominal.p_hat.size
        for v in doc["theta_star"]:
            assert isinstance(v, float) or v in ("inf", "-inf")
