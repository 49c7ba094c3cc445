import numpy as np
import pytest

from vbscore.errors import InvalidInput
from vbscore.gains import GainVector
from vbscore.metric import bernoulli_variance, expected_success, vb_score

from conftest import make_dist

# hand-computed oracle values
SOFTMAX_210 = (0.6652409557748219, 0.24472847105479764, 0.09003057317038046)
ES_210_101 = 0.7552715289452023  # pi_0 + pi_2
VB_0833_HALF = 0.6465120647333988  # 0.833 - 0.5*sqrt(0.833*0.167)


def gains_for(dist, values, mode="binary"):
    return GainVector(
        tuple((eid, v) for eid, v in zip(dist.entity_ids(), values)), mode=mode
    )


class TestExpectedSuccess:
    def test_uniform_two_intents(self):
        dist = make_dist([("E1", 0.5), ("E2", 0.5)])
        assert expected_success(dist, gains_for(dist, (1.0, 0.0))) == 0.5

    def test_hand_dot_product(self):
        dist = make_dist(list(zip(("E1", "E2", "E3"), SOFTMAX_210)))
        es = expected_success(dist, gains_for(dist, (1.0, 0.0, 1.0)))
        assert es == pytest.approx(ES_210_101, abs=1e-5)

    def test_full_coverage_is_exactly_one(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            probs = rng.dirichlet(np.ones(int(rng.integers(1, 9))))
            dist = make_dist([(f"E{i}", float(p)) for i, p in enumerate(probs)])
            es = expected_success(dist, gains_for(dist, (1.0,) * len(probs)))
            assert es == 1.0

    def test_misaligned_vectors_rejected(self):
        dist = make_dist([("E1", 0.5), ("E2", 0.5)])
        other = make_dist([("E2", 0.5), ("E1", 0.5)])
        with pytest.raises(InvalidInput):
            expected_success(dist, gains_for(other, (1.0, 0.0)))


class TestBernoulliVariance:
    def test_reference_products(self):
        assert bernoulli_variance(0.833) == pytest.approx(0.139, abs=0.001)
        assert bernoulli_variance(0.867) == pytest.approx(0.115, abs=0.001)

    def test_degenerate_endpoints(self):
        assert bernoulli_variance(0.0) == 0.0
        assert bernoulli_variance(1.0) == 0.0

    def test_maximum_at_half(self):
        assert bernoulli_variance(0.5) == 0.25

    def test_out_of_range_rejected(self):
        for bad in (-0.1, 1.1, float("nan")):
            with pytest.raises(InvalidInput):
                bernoulli_variance(bad)


class TestVbScore:
    def test_ceiling_ignores_alpha(self):
        for alpha in (0.0, 0.5, 1.0, 2.0):
            assert vb_score(1.0, alpha).vb == 1.0

    def test_alpha_zero_is_identity(self):
        for es in (0.0, 0.123, 0.5, 0.987):
            assert vb_score(es, 0.0).vb == es

    def test_hand_computed_example(self):
        out = vb_score(0.833, 0.5)
        assert out.vb_raw == pytest.approx(VB_0833_HALF, abs=1e-12)
        # the approximate target value quoted alongside the formula
        assert out.vb_raw == pytest.approx(0.64661, abs=1e-4)

    def test_clamping_reports_both_values(self):
        out = vb_score(0.1, 1.0)
        assert out.vb_raw == pytest.approx(-0.2, abs=1e-12)
        assert out.vb == 0.0

    def test_variance_consistent(self):
        out = vb_score(0.3, 0.7)
        assert out.variance == pytest.approx(0.3 * 0.7, abs=1e-12)

    def test_negative_alpha_rejected(self):
        with pytest.raises(InvalidInput):
            vb_score(0.5, -0.5)


class TestMetricProperties:
    def test_monotonicity_quick_fuzz(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            n = int(rng.integers(1, 8))
            probs = rng.dirichlet(np.ones(n))
            dist = make_dist([(f"E{i}", float(p)) for i, p in enumerate(probs)])
            gains = rng.random(n)
            j = int(np.argmax(probs))
            gains[j] = rng.uniform(0.0, 0.7)
            lifted = gains.copy()
            lifted[j] = gains[j] + 0.2
            before = expected_success(dist, gains_for(dist, gains, mode="dcg"))
            after = expected_success(dist, gains_for(dist, lifted, mode="dcg"))
            assert after > before

    def test_stability_quick_fuzz(self):
        rng = np.random.default_rng(6)
        for _ in range(500):
            n = int(rng.integers(1, 8))
            p = rng.dirichlet(np.ones(n))
            q = rng.dirichlet(np.ones(n))
            gains = rng.random(n)
            dist_p = make_dist([(f"E{i}", float(x)) for i, x in enumerate(p)])
            dist_q = make_dist([(f"E{i}", float(x)) for i, x in enumerate(q)])
            es_p = expected_success(dist_p, gains_for(dist_p, gains, mode="dcg"))
            es_q = expected_success(dist_q, gains_for(dist_q, gains, mode="dcg"))
            assert abs(es_p - es_q) <= np.abs(p - q).sum() + 1e-12

    def test_vb_raw_below_es_unless_degenerate(self):
        rng = np.random.default_rng(8)
        for _ in range(500):
            es = float(rng.random())
            alpha = float(rng.random() * 2)
            out = vb_score(es, alpha)
            assert out.vb_raw <= es
            if 0.0 < es < 1.0 and alpha > 0.0:
                assert out.vb_raw < es

    def test_vb_raw_strictly_decreasing_in_alpha(self):
        for es in (0.1, 0.4, 0.75, 0.99):
            values = [vb_score(es, a).vb_raw for a in np.linspace(0, 2, 9)]
            assert all(x > y for x, y in zip(values, values[1:]))

    def test_jensen_mean_vb_at_least_vb_of_mean(self):
        rng = np.random.default_rng(9)
        for _ in range(500):
            es_values = rng.random(int(rng.integers(1, 30)))
            alpha = float(rng.random())
            mean_vb = float(np.mean([vb_score(e, alpha).vb for e in es_values]))
            vb_of_mean = vb_score(float(es_values.mean()), alpha).vb
            assert mean_vb >= vb_of_mean - 1e-12

    def test_jensen_explains_headline_gap(self):
        # per-replica penalty averaging exceeds penalty-of-average:
        # mean-of-VB over a spread of replica ES values stays above
        # VB(mean ES) = 0.833 - 0.5*sqrt(0.833*0.167) ~ 0.647
        rng = np.random.default_rng(10)
        replicas = np.clip(rng.normal(0.833, 0.2, size=20), 0.0, 1.0)
        mean_vb = float(np.mean([vb_score(float(e), 0.5).vb for e in replicas]))
        assert mean_vb >= vb_score(float(replicas.mean()), 0.5).vb - 1e-12
