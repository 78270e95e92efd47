import math

import numpy as np
import pytest

from prequential.conjugate import BetaBinomial, ConjugatePredictor, NormalInvGamma, NormalKnownVar
from prequential.core import Discrete, Normal, Uniform, predictive_interval, pi_loss, SQUARED
from prequential.scoring import (
    CPETracker,
    brier_score,
    compare_forecasters,
    cpe,
    cumulative_log_score,
    kolmogorov_sf,
    ks_statistic,
    log_score,
    out_of_support_steps,
    pe,
    pit_uniformity,
)

from oracles import normal_cdf_series


class TestLogScore:
    def test_discrete_mass(self):
        d = Discrete([0, 1, 2, 3], [0.25] * 4)
        assert log_score(d, 2) == pytest.approx(math.log(4), abs=1e-15)
        assert log_score(d, 2) == pytest.approx(1.386294, abs=1e-6)

    def test_uniform_interior(self):
        assert log_score(Uniform(0, 1), 0.37) == 0.0

    def test_standard_normal(self):
        # phi(0) = 1/sqrt(2 pi) is the series derivative at 0: (Phi(h) - Phi(-h)) / 2h
        h = 1e-4
        phi0 = (normal_cdf_series(h) - normal_cdf_series(-h)) / (2 * h)
        assert log_score(Normal(0, 1), 0.0) == pytest.approx(-math.log(phi0), abs=1e-6)
        assert log_score(Normal(0, 1), 0.0) == pytest.approx(0.918939, abs=1e-6)

    def test_out_of_support(self):
        assert log_score(Discrete([0, 1], [1.0, 0.0]), 1) == math.inf
        assert log_score(Uniform(0, 1), 2.0) == math.inf

    def test_propriety(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            p = rng.dirichlet(np.ones(5))
            q = rng.dirichlet(np.ones(5))
            P, Q = Discrete(range(5), p), Discrete(range(5), q)
            ep = sum(pk * log_score(P, k) for k, pk in enumerate(P.masses))
            eq = sum(pk * log_score(Q, k) for k, pk in enumerate(P.masses))
            assert ep < eq
            same = sum(pk * log_score(Discrete(range(5), p.copy()), k) for k, pk in enumerate(P.masses))
            assert same == pytest.approx(ep, abs=1e-12)

    def test_brier_propriety(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            p = rng.dirichlet(np.ones(5))
            q = rng.dirichlet(np.ones(5))
            P, Q = Discrete(range(5), p), Discrete(range(5), q)
            ep = sum(pk * brier_score(P, k) for k, pk in enumerate(p))
            eq = sum(pk * brier_score(Q, k) for k, pk in enumerate(p))
            assert ep <= eq + 1e-15


class TestCumulative:
    def test_uniform_zero(self):
        assert cumulative_log_score([log_score(Uniform(0, 1), u) for u in (0.1, 0.5, 0.9)]) == 0.0

    def test_beta_binomial_log6(self):
        pred = ConjugatePredictor(BetaBinomial(1, 1))
        scores = []
        for y in (1, 0):
            scores.append(log_score(pred.predictive(), y))
            pred.observe(None, y)
        assert cumulative_log_score(scores) == pytest.approx(math.log(6), abs=1e-15)

    def test_two_step_normal_joint(self):
        # y1 ~ N(0, 2), y2 | y1 ~ N(y1/2, 1.5): the joint is N(0, [[2, 1], [1, 2]])
        model = NormalKnownVar(0, 1, 1)
        y = np.array([0.7, -1.3])
        pred = ConjugatePredictor(model)
        total = 0.0
        for v in y:
            total += log_score(pred.predictive(), v)
            pred.observe(None, v)
        C = np.array([[2.0, 1.0], [1.0, 2.0]])
        joint = 0.5 * y @ np.linalg.solve(C, y) + 0.5 * math.log(np.linalg.det(2 * math.pi * C))
        assert total == pytest.approx(joint, abs=1e-10)

    def test_out_of_support_flag(self):
        vals = [0.5, math.inf, 0.2, math.inf]
        assert cumulative_log_score(vals) == math.inf
        assert out_of_support_steps(vals) == [1, 3]

    @pytest.mark.parametrize("make", [lambda r: BetaBinomial(*r.uniform(0.3, 4, 2)), lambda r: NormalInvGamma(r.normal(), *r.uniform(0.2, 3, 3))])
    def test_chain_rule(self, make):
        rng = np.random.default_rng(2)
        for _ in range(50):
            model = make(rng)
            n = int(rng.integers(1, 30))
            ys = rng.integers(0, 2, n).tolist() if isinstance(model, BetaBinomial) else rng.normal(0, 3, n).tolist()
            pred = ConjugatePredictor(model)
            scores = []
            for y in ys:
                scores.append(log_score(pred.predictive(), y))
                pred.observe(None, y)
            assert cumulative_log_score(scores) == pytest.approx(-model.log_marginal(ys), abs=1e-10)


class TestCompare:
    def test_identical(self):
        assert float(compare_forecasters([1.0, 2.0], [1.0, 2.0])) == 0.0

    def test_single_step(self):
        c = compare_forecasters([-math.log(0.25)], [-math.log(0.5)])
        assert c.total == pytest.approx(math.log(2))
        assert c.mean == c.total and c.n == 1

    def test_mismatched(self):
        with pytest.raises(ValueError):
            compare_forecasters([1.0], [1.0, 2.0])

    def test_truth_wins(self):
        pos = 0
        for seed in range(200):
            rng = np.random.default_rng(seed)
            ys = rng.normal(0, 1, 500)
            r = [log_score(Normal(0, 1), y) for y in ys]
            q = [log_score(Normal(0.2, 1.3), y) for y in ys]
            pos += compare_forecasters(q, r).total > 0
        assert pos >= 190


class TestCPE:
    def test_examples(self):
        assert cpe([1, 2, 3]) == 2
        assert cpe([SQUARED.evaluate(y, y) for y in (1.0, 2.0)]) == 0

    def test_interval_coverage(self):
        iv = predictive_interval(Uniform(0, 1), 0.1)
        losses = [pe(iv, y, pi_loss(0.9)) for y in (0.2, 0.5, 0.99, 0.7)]
        assert cpe(losses) == 0.75

    def test_empty(self):
        with pytest.raises(ValueError):
            cpe([])

    def test_linearity(self):
        rng = np.random.default_rng(3)
        a, b = rng.exponential(size=17), rng.exponential(size=40)
        whole = cpe(np.concatenate([a, b]))
        assert whole == pytest.approx((17 * cpe(a) + 40 * cpe(b)) / 57, abs=1e-12)

    def test_tracker(self):
        rng = np.random.default_rng(4)
        losses = rng.exponential(size=1000) * 1e6
        t = CPETracker(window=10)
        for v in losses:
            t.add(v)
        assert t.cpe == pytest.approx(math.fsum(losses) / 1000, abs=1e-12 * 1e6)
        assert t.window_full
        assert t.window_cpe == pytest.approx(np.mean(losses[-10:]))
        t.clear_window()
        assert not t.window_full

    def test_window_validation(self):
        with pytest.raises(ValueError):
            CPETracker(0)


class TestPitUniformity:
    def test_equally_spaced(self):
        us = np.linspace(0.1, 0.9, 9)
        d, _ = pit_uniformity(us)
        i = np.arange(1, 10)
        direct = max(np.max(i / 9 - us), np.max(us - (i - 1) / 9))
        assert d == pytest.approx(direct, abs=1e-12)
        assert d == pytest.approx(0.1, abs=1e-12)

    def test_all_high(self):
        _, p = pit_uniformity([0.99] * 20)
        assert p < 0.001

    def test_series_against_scipy_limit(self):
        from scipy import stats

        for lam in (0.3, 0.6, 1.0, 1.36, 2.0):
            assert kolmogorov_sf(lam) == pytest.approx(stats.kstwobign.sf(lam), abs=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            pit_uniformity([0.5] * 4)
        with pytest.raises(ValueError):
            pit_uniformity([0.5, 0.2, 1.2, 0.3, 0.4])

    def test_size_under_null(self):
        rejects = 0
        for seed in range(200):
            u = np.random.default_rng(seed).uniform(size=400)
            rejects += pit_uniformity(u)[1] < 0.05
        assert rejects <= 20

    def test_ks_statistic_matches_scipy(self):
        from scipy import stats

        u = np.random.default_rng(5).uniform(size=50)
        assert ks_statistic(u) == pytest.approx(stats.kstest(u, "uniform").statistic, abs=1e-15)
