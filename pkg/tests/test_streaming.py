import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from prequential.core import ABSOLUTE, SQUARED, Discrete, Uniform, pi_loss, point_prediction
from prequential.streaming import (
    MERSENNE_61,
    CountMinPredictor,
    CountMinSketch,
    EDFPredictor,
    ExpertSet,
    HashFamily,
    ShtarkovPredictor,
    cms_distribution,
    cms_estimate,
    cms_new,
    cms_predict_next,
    cms_update,
    edf_predictor,
    max_regret,
    mulmod61,
    shtarkov_joint,
    shtarkov_predict,
)

from oracles import exact_bernoulli_mixture_prob


class TestEDF:
    def test_masses(self):
        p = edf_predictor()
        for y in (1, 1, 2):
            p.observe(None, y)
        d = p.predictive()
        assert d.density(1) == pytest.approx(2 / 3) and d.density(2) == pytest.approx(1 / 3)
        assert d.cdf(0.5) == 0.0

    def test_median(self):
        p = edf_predictor()
        for y in (5, 1, 3):
            p.observe(None, y)
        assert point_prediction(p.predictive(), ABSOLUTE) == 3

    def test_needs_initial(self):
        with pytest.raises(ValueError, match="initial"):
            edf_predictor().predictive()
        assert EDFPredictor(Uniform(0, 1)).predictive() == Uniform(0, 1)


class TestHashing:
    def test_mulmod_against_python(self):
        rng = np.random.default_rng(0)
        a = rng.integers(1, MERSENNE_61, size=2000, dtype=np.int64).astype(np.uint64)
        u = rng.integers(0, MERSENNE_61, size=2000, dtype=np.int64).astype(np.uint64)
        got = mulmod61(a, u)
        want = [(int(x) * int(y)) % MERSENNE_61 for x, y in zip(a, u)]
        assert got.tolist() == want

    def test_rows_match_scalar(self):
        h = HashFamily.draw(4, 97, seed=3)
        us = np.random.default_rng(1).integers(0, 10**9, 500)
        rows = h.hash_rows(us)
        for j in range(4):
            assert rows[j].tolist() == [h.hash_one(j, int(u)) for u in us]

    def test_pairwise_collisions(self):
        W = 50
        trials = 100_000
        rng = np.random.default_rng(4)
        a = rng.integers(1, MERSENNE_61, size=trials, dtype=np.int64).astype(np.uint64)
        b = rng.integers(0, MERSENNE_61, size=trials, dtype=np.int64).astype(np.uint64)
        u = rng.integers(0, 10**6, size=trials).astype(np.uint64)
        v = (u + rng.integers(1, 10**6, size=trials).astype(np.uint64)) % np.uint64(10**6)
        M = np.uint64(MERSENNE_61)

        def h(x):
            s = mulmod61(a, x) + b
            s = np.where(s >= M, s - M, s)
            return s % np.uint64(W)

        p = np.mean(h(u) == h(v))
        se = math.sqrt((1 / W) * (1 - 1 / W) / trials)
        assert abs(p - 1 / W) <= 3 * se


class TestCountMin:
    def test_dimensions(self):
        s = cms_new(0.01, 0.05, 10**6, 0)
        assert (s.width, s.d, s.cells) == (200, 5, 1000)
        s = cms_new(0.5, 0.5, 10, 0)
        assert (s.width, s.d) == (4, 1)

    def test_parameter_checks(self):
        for eps, delta, U in ((0, 0.1, 10), (0.1, 1.0, 10), (0.1, 0.1, 1)):
            with pytest.raises(ValueError):
                cms_new(eps, delta, U, 0)

    def test_single_update(self):
        s = cms_new(0.1, 0.1, 100, 1)
        cms_update(s, 42)
        assert np.all((s.counters == 1).sum(axis=1) == 1)

    def test_row_sums_and_monotone(self):
        s = cms_new(0.05, 0.01, 1000, 2)
        rng = np.random.default_rng(0)
        prev = s.counters.copy()
        for chunk in range(5):
            s.update_many(rng.integers(0, 1000, 300))
            assert np.all(s.counters.sum(axis=1) == s.n)
            assert np.all(s.counters >= prev)
            prev = s.counters.copy()

    def test_out_of_universe(self):
        with pytest.raises(ValueError):
            cms_update(cms_new(0.1, 0.1, 10, 0), 10)

    def test_empty_and_single(self):
        s = cms_new(0.1, 0.1, 100, 5)
        assert cms_estimate(s, 7) == 0
        for _ in range(13):
            cms_update(s, 7)
        assert cms_estimate(s, 7) == 13

    def test_collision_overcounts(self):
        s = CountMinSketch(1, 1, seed=0, universe=10)
        s.update_many([1, 1, 2])
        assert s.estimate(1) == 3 and s.estimate(2) == 3

    def test_never_undercounts(self):
        rng = np.random.default_rng(6)
        for seed in range(20):
            s = cms_new(0.05, 0.1, 5000, seed)
            stream = rng.integers(0, 5000, 4000)
            s.update_many(stream)
            exact = np.bincount(stream, minlength=5000)
            assert np.all(s.estimate_many(np.arange(5000)) >= exact)

    def test_merge_exact(self):
        rng = np.random.default_rng(7)
        A, B = rng.integers(0, 300, 1000), rng.integers(0, 300, 700)
        sa, sb, sab = (cms_new(0.02, 0.05, 300, 9) for _ in range(3))
        sa.update_many(A)
        sb.update_many(B)
        sab.update_many(np.concatenate([A, B]))
        merged = sa.merge(sb)
        assert merged == sab
        assert merged.to_bytes() == sab.to_bytes()
        with pytest.raises(ValueError):
            sa.merge(cms_new(0.02, 0.05, 300, 10))

    def test_snapshot_roundtrip(self):
        s = cms_new(0.1, 0.2, 50, 4)
        s.update_many([1, 2, 3, 3])
        blob = s.to_bytes()
        assert blob[:4] == b"CMS1"
        assert len(blob) == 4 + 32 + 8 * s.cells
        back = CountMinSketch.from_bytes(blob)
        assert back == s and back.to_bytes() == blob
        assert back.estimate(3) == s.estimate(3)
        with pytest.raises(ValueError):
            CountMinSketch.from_bytes(b"XXXX" + blob[4:])

    def test_predict_next(self):
        s = cms_new(0.01, 0.01, 10, 0)
        s.update_many([4] * 9)
        for loss in (SQUARED, ABSOLUTE, pi_loss(0.9)):
            assert cms_predict_next(s, [4, 5], loss) == 4
        t = CountMinSketch(3, 1000, seed=1, universe=10)
        t.update_many([1] * 10 + [3] * 30)
        assert cms_predict_next(t, [1, 3], SQUARED) == pytest.approx(2.5)

    def test_predict_errors(self):
        s = cms_new(0.1, 0.1, 10, 0)
        with pytest.raises(ValueError):
            cms_distribution(s, [1])
        s.update(1)
        with pytest.raises(ValueError):
            cms_distribution(s, [])

    def test_mode_matches_exact(self):
        agree = 0
        for seed in range(200):
            rng = np.random.default_rng(seed)
            p = rng.dirichlet(np.ones(20))
            stream = rng.choice(20, size=2000, p=p)
            s = cms_new(0.01, 0.05, 20, seed)
            s.update_many(stream)
            exact = np.bincount(stream, minlength=20)
            agree += cms_predict_next(s, list(range(20)), pi_loss(0.9)) == int(np.argmax(exact))
        assert agree >= 190

    def test_predictor_wrapper(self):
        p = CountMinPredictor(0.1, 0.1, 10, 0, candidates=[0, 1, 2])
        for y in (0, 2, 2):
            p.observe(None, y)
        d = p.predictive()
        assert d.density(2) >= d.density(0)
        p.reset()
        assert p.sketch.n == 0


class TestShtarkov:
    def _pair(self, weights=(1.0, 1.0)):
        return ExpertSet(2, list(weights), [[0.7, 0.3], [0.3, 0.7]])

    def test_single_expert(self):
        ex = ExpertSet(2, [1.0], [[0.4, 0.6]])
        joint = shtarkov_joint(ex, 3)
        for s, p in joint.as_dict().items():
            assert p == pytest.approx(0.6 ** sum(s) * 0.4 ** (3 - sum(s)), abs=1e-15)
        assert max_regret(joint.probs, ex, 3) == pytest.approx(0.0, abs=1e-12)
        d = shtarkov_predict(ex, [1, 0], horizon=3)
        assert d.density(1) == pytest.approx(0.6, abs=1e-12)

    def test_point_mass_experts(self):
        ex = ExpertSet(2, [0.5, 0.5], [[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(shtarkov_joint(ex, 1).probs, [0.5, 0.5], atol=1e-15)

    def test_pair_enumeration(self):
        joint = shtarkov_joint(self._pair(), 2)
        sup = {}
        for s in itertools.product((0, 1), repeat=2):
            sup[s] = max(
                Fraction(1, 2) * exact_bernoulli_mixture_prob([t], [1], s) for t in (Fraction(3, 10), Fraction(7, 10))
            )
        z = sum(sup.values())
        for s, v in sup.items():
            assert joint.prob(s) == pytest.approx(float(v / z), abs=1e-12)
        assert abs(joint.probs.sum() - 1) < 1e-12

    def test_symmetric_uniform_start(self):
        d = shtarkov_predict(self._pair(), [])
        np.testing.assert_allclose(d.masses, [0.5, 0.5], atol=1e-15)

    def test_minimax_against_alternatives(self):
        ex = self._pair()
        rng = np.random.default_rng(0)
        for n in range(1, 7):
            q = shtarkov_joint(ex, n).probs
            r = max_regret(q, ex, n)
            for pmf in ex.experts:
                single = np.array([np.prod([pmf[c] for c in s]) for s in itertools.product((0, 1), repeat=n)])
                assert r <= max_regret(single, ex, n) + 1e-12
            for _ in range(200):
                alt = rng.dirichlet(np.ones(2**n))
                assert r <= max_regret(alt, ex, n) + 1e-12

    def test_regret_equalized(self):
        ex = self._pair()
        joint = shtarkov_joint(ex, 3)
        sup = ex.log_weighted_joint(joint.strings).max(axis=0)
        np.testing.assert_allclose(sup - np.log(joint.probs), joint.log_normalizer, atol=1e-12)

    def test_not_prefix_consistent(self):
        ex = self._pair()
        two = shtarkov_joint(ex, 2).probs
        three = shtarkov_joint(ex, 3).marginal(2)
        assert two[0] == pytest.approx(0.35, abs=1e-12)
        assert three[0] == pytest.approx(0.3125, abs=1e-12)
        assert not np.allclose(two, three)

    def test_predictor_uses_fixed_horizon(self):
        ex = self._pair()
        pred = ShtarkovPredictor(ex, horizon=3)
        joint = shtarkov_joint(ex, 3)
        pred.observe(None, 0)
        d = pred.predictive()
        m2 = joint.marginal(2)
        m1 = joint.marginal(1)
        assert d.density(0) == pytest.approx(m2[0] / m1[0], abs=1e-12)
        pred.observe(None, 0)
        pred.observe(None, 1)
        with pytest.raises(ValueError, match="exhausted"):
            pred.predictive()

    def test_sequence_dependent_expert(self):
        # an expert that repeats the last symbol with probability 0.9
        def sticky(prefix):
            if not prefix:
                return [0.5, 0.5]
            return [0.9, 0.1] if prefix[-1] == 0 else [0.1, 0.9]

        ex = ExpertSet(2, [1.0, 1.0], [sticky, [0.5, 0.5]])
        joint = shtarkov_joint(ex, 4)
        assert abs(joint.probs.sum() - 1) < 1e-12
        assert joint.prob((0, 0, 0, 0)) > joint.prob((0, 1, 0, 1))

    def test_cap(self):
        with pytest.raises(ValueError, match="cap"):
            shtarkov_joint(ExpertSet(2, [1.0], [[0.5, 0.5]]), 21)

    def test_bad_expert(self):
        with pytest.raises(ValueError):
            ExpertSet(2, [1.0], [[0.5, 0.6]])
        with pytest.raises(ValueError):
            ExpertSet(2, [0.0], [[0.5, 0.5]])
