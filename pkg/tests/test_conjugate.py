import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from prequential.conjugate import (
    BetaBinomial,
    ConjugatePredictor,
    ImproperPosteriorError,
    NormalInvGamma,
    NormalKnownVar,
    PlugInPredictor,
    SupportError,
    log_marginal_likelihood,
    plug_in_predictor,
    posterior_predictive,
    posterior_update,
)

from oracles import bernoulli_marginal_quad, nig_marginal_quad, normal_known_var_marginal_quad, normal_pdf


class TestPosteriorUpdate:
    def test_beta_counting(self):
        m = BetaBinomial(1, 1).update_many([1] * 7 + [0] * 3)
        assert m.params == (8, 4)
        assert m.n_obs == 10

    def test_normal_known_var_grid_oracle(self):
        post = posterior_update(NormalKnownVar(0, 1, 1), 2.0)
        grid = np.linspace(-12, 14, 400_001)
        w = np.exp(-0.5 * grid**2 - 0.5 * (2.0 - grid) ** 2)
        z = integrate.trapezoid(w, grid)
        mean = integrate.trapezoid(grid * w, grid) / z
        var = integrate.trapezoid((grid - mean) ** 2 * w, grid) / z
        m, v = post.params
        assert m == pytest.approx(mean, abs=1e-8)
        assert v == pytest.approx(var, abs=1e-8)
        assert (m, v) == pytest.approx((1.0, 0.5), abs=1e-15)

    def test_nig_symmetry(self):
        mn, *_ = NormalInvGamma(0, 1, 2, 2).update(0.0).params
        assert mn == 0.0

    def test_support_violation(self):
        with pytest.raises(SupportError):
            BetaBinomial(1, 1).update(2)
        with pytest.raises(SupportError):
            NormalKnownVar(0, 1, 1).update(float("inf"))

    def test_bad_hyperparameters(self):
        with pytest.raises(ValueError):
            BetaBinomial(0, 1)
        with pytest.raises(ValueError):
            NormalInvGamma(0, 1, -1, 1)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=12), st.randoms(use_true_random=False))
    def test_exchangeable(self, ys, rnd):
        perm = list(ys)
        rnd.shuffle(perm)
        for model in (NormalKnownVar(0.3, 2.0, 1.5), NormalInvGamma(-1.0, 0.5, 2.0, 3.0)):
            assert model.update_many(ys).params == model.update_many(perm).params

    def test_exchangeable_bernoulli(self):
        rng = np.random.default_rng(1)
        ys = rng.integers(0, 2, 30).tolist()
        m = BetaBinomial(0.5, 2.5)
        assert m.update_many(ys).params == m.update_many(rng.permutation(ys).tolist()).params


class TestPredictive:
    def test_beta_mean(self):
        d = posterior_predictive(BetaBinomial(8, 4))
        assert d.density(1) == pytest.approx(2 / 3, abs=1e-15)
        assert abs(d.masses.sum() - 1) < 1e-12

    def test_normal_known_var_quadrature(self):
        post = NormalKnownVar(0, 1, 1).update(2.0)
        d = post.predictive()
        assert d.mean() == pytest.approx(1.0)
        assert d.variance() == pytest.approx(1.5)
        for y in np.linspace(-4, 6, 11):
            val, _ = integrate.quad(lambda th: normal_pdf(y, th, 1.0) * normal_pdf(th, 1.0, 0.5), -30, 30, epsabs=1e-13)
            assert d.density(y) == pytest.approx(val, abs=1e-6)

    def test_nig_quadrature(self):
        d = NormalInvGamma(0, 1, 2, 2).predictive()
        assert d.df == 4
        assert d.scale == pytest.approx(math.sqrt(2 * 2 / 2))

        def dens(y):
            def inner(u):
                s2 = math.exp(u)
                lig = 2 * math.log(2) - math.lgamma(2) - 3 * math.log(s2) - 2 / s2
                # mu | s2 ~ N(0, s2), y | mu, s2 ~ N(mu, s2): y | s2 ~ N(0, 2 s2)
                return normal_pdf(y, 0.0, 2 * s2) * math.exp(lig) * s2

            return integrate.quad(inner, -30, 30, epsabs=0, epsrel=1e-11, limit=300)[0]

        for y in np.linspace(-6, 6, 50):
            assert d.density(y) == pytest.approx(dens(y), abs=1e-6)

    def test_continuous_predictives_integrate_to_one(self):
        for model in (NormalKnownVar(1, 2, 0.5).update(3.0), NormalInvGamma(0, 2, 1.5, 0.7).update_many([1, 2])):
            d = model.predictive()
            val, _ = integrate.quad(d.density, -np.inf, np.inf)
            assert val == pytest.approx(1.0, abs=1e-6)


class TestLogMarginal:
    def test_beta_examples(self):
        assert log_marginal_likelihood(BetaBinomial(1, 1), [1, 0]) == pytest.approx(math.log(1 / 6), abs=1e-14)
        assert log_marginal_likelihood(BetaBinomial(2, 2), [1]) == pytest.approx(math.log(0.5), abs=1e-14)

    def test_normal_known_var_quadrature(self):
        got = log_marginal_likelihood(NormalKnownVar(0, 1, 1), [0.5, -0.5])
        assert math.exp(got) == pytest.approx(normal_known_var_marginal_quad(0, 1, 1, [0.5, -0.5]), abs=1e-6)

    def test_nig_quadrature(self):
        ys = [0.3, -1.2, 2.0]
        got = math.exp(log_marginal_likelihood(NormalInvGamma(0.5, 1.5, 2.5, 1.7), ys))
        assert got == pytest.approx(nig_marginal_quad(0.5, 1.5, 2.5, 1.7, ys), rel=1e-6)

    def test_beta_quadrature(self):
        ys = [1, 1, 0, 1, 0, 0, 0]
        got = math.exp(log_marginal_likelihood(BetaBinomial(0.7, 2.2), ys))
        assert got == pytest.approx(bernoulli_marginal_quad(0.7, 2.2, ys), rel=1e-9)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            log_marginal_likelihood(BetaBinomial(1, 1), [])

    def test_chain_rule_bernoulli(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a, b = rng.uniform(0.2, 5, 2)
            ys = rng.integers(0, 2, 10).tolist()
            m = BetaBinomial(a, b)
            prod = 1.0
            for y in ys:
                prod *= m.predictive().density(y)
                m = m.update(y)
            assert math.exp(log_marginal_likelihood(BetaBinomial(a, b), ys)) == pytest.approx(prod, rel=1e-12)

    @pytest.mark.parametrize("model", [NormalKnownVar(0.4, 3.0, 0.8), NormalInvGamma(-0.2, 0.3, 1.2, 2.0)])
    def test_chain_rule_continuous(self, model):
        rng = np.random.default_rng(8)
        ys = rng.normal(1, 2, 25)
        m = model
        total = 0.0
        for y in ys:
            total += math.log(m.predictive().density(y))
            m = m.update(y)
        assert model.log_marginal(ys) == pytest.approx(total, abs=1e-10)

    def test_weighted_marginal_quadrature(self):
        # integral of prior x likelihood**f
        f = 0.4
        ys = [1, 0, 1, 1]
        s, n = sum(ys), len(ys)
        val, _ = integrate.quad(lambda th: th ** (f * s) * (1 - th) ** (f * (n - s)) * 6 * th * (1 - th), 0, 1)
        assert math.exp(BetaBinomial(2, 2).log_marginal(ys, weight=f)) == pytest.approx(val, rel=1e-9)

    def test_flat_prior_is_improper(self):
        with pytest.raises(ImproperPosteriorError):
            NormalKnownVar(0, math.inf, 1).log_marginal([1.0])
        post = NormalKnownVar(0, math.inf, 1).update(2.0)
        assert post.params == (2.0, 1.0)


class TestPlugIn:
    def test_bernoulli_mle(self):
        p = plug_in_predictor("bernoulli")
        for y in (1, 1, 0):
            p.observe(None, y)
        assert p.predictive().density(1) == pytest.approx(2 / 3)

    def test_normal_mle(self):
        p = plug_in_predictor("normal")
        p.observe(None, 1.0)
        p.observe(None, 3.0)
        d = p.predictive()
        assert (d.mean(), d.variance()) == pytest.approx((2.0, 1.0))

    def test_posterior_mean(self):
        p = plug_in_predictor("bernoulli", "posterior_mean", prior=BetaBinomial(1, 1))
        p.observe(None, 1)
        p.observe(None, 0)
        assert p.predictive().density(1) == pytest.approx(0.5)

    def test_burn_in_error(self):
        with pytest.raises(ValueError, match="burn-in"):
            plug_in_predictor("bernoulli").predictive()

    def test_variance_not_above_bayes(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            prior = NormalKnownVar(0, 4, 1.3)
            plug = PlugInPredictor("normal_known_var", "posterior_mean", prior=prior)
            bayes = ConjugatePredictor(prior)
            for y in rng.normal(1, 1, rng.integers(1, 15)):
                plug.observe(None, y)
                bayes.observe(None, y)
                assert plug.predictive().variance() <= bayes.predictive().variance()


class TestConjugatePredictor:
    def test_replay_determinism(self):
        ys = np.random.default_rng(0).normal(size=20)
        a, b = ConjugatePredictor(NormalInvGamma(0, 1, 2, 2)), ConjugatePredictor(NormalInvGamma(0, 1, 2, 2))
        for y in ys:
            assert a.predictive().mean() == b.predictive().mean()
            a.observe(None, y)
            b.observe(None, y)

    def test_refit_matches_fresh(self):
        p = ConjugatePredictor(BetaBinomial(1, 1))
        for y in (1, 0, 1):
            p.observe(None, y)
        p.refit([(None, 0), (None, 0)])
        assert p.model.params == (1, 3)
