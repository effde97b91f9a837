import numpy as np
import numpy.testing as npt
import pytest
from scipy.integrate import quad
from scipy.stats import kstest

from splinehmm.basis import build_basis
from splinehmm.densities import (
    NormalDensity,
    NormalMixtureDensity,
    SplineDensity,
    kld,
    softmax_weights,
)


def gaussian_kld(m1, s1, m2, s2):
    """Closed-form KL(N(m1,s1) || N(m2,s2)); the quadrature oracle target."""
    return np.log(s2 / s1) + (s1**2 + (m1 - m2) ** 2) / (2 * s2**2) - 0.5


@pytest.fixture(scope="module")
def basis():
    return build_basis(-3.0, 3.0, 6)


class TestSplineDensity:
    def test_zero_logits_give_uniform_weights(self, basis):
        d = SplineDensity(basis, np.zeros(basis.size))
        npt.assert_allclose(d.weights, 1.0 / basis.size)
        x = 0.37
        assert d.pdf(x) == pytest.approx(basis.evaluate(x).mean())

    def test_logit_shift_invariance(self, basis):
        rng = np.random.default_rng(0)
        b = rng.normal(size=basis.size)
        d1 = SplineDensity(basis, b)
        d2 = SplineDensity(basis, b + 10.0)
        npt.assert_allclose(d1.weights, d2.weights, atol=1e-15)
        assert np.all(d1.weights > 0)
        assert d1.weights.sum() == pytest.approx(1.0)

    def test_pdf_integrates_to_one(self, basis):
        rng = np.random.default_rng(1)
        d = SplineDensity(basis, rng.normal(size=basis.size))
        lo, hi = d.effective_support()
        val, _ = quad(d.pdf, lo, hi, limit=300)
        assert val == pytest.approx(1.0, abs=1e-8)

    def test_cdf_matches_quadrature(self, basis):
        rng = np.random.default_rng(2)
        d = SplineDensity(basis, rng.normal(scale=0.8, size=basis.size))
        lo, hi = d.effective_support()
        knots = basis.grid.knots
        for x in rng.uniform(lo, hi, size=100):
            breaks = knots[(knots > lo) & (knots < x)]
            val, _ = quad(d.pdf, lo, x, points=breaks, limit=300)
            assert d.cdf(x) == pytest.approx(val, abs=1e-8)

    def test_sample_mean_matches_moments(self, basis):
        rng = np.random.default_rng(3)
        d = SplineDensity(basis, rng.normal(size=basis.size))
        draws = d.sample(np.random.default_rng(99), size=100_000)
        var = d.second_moment() - d.mean() ** 2
        se = np.sqrt(var / draws.size)
        assert abs(draws.mean() - d.mean()) < 3 * se

    def test_sampling_deterministic_under_seed(self, basis):
        d = SplineDensity(basis, np.linspace(-1, 1, basis.size))
        a = d.sample(np.random.default_rng(7), size=50)
        b = d.sample(np.random.default_rng(7), size=50)
        npt.assert_array_equal(a, b)

    def test_free_logit_round_trip(self, basis):
        rng = np.random.default_rng(4)
        free = rng.normal(size=basis.size - 1)
        d = SplineDensity.from_free_logits(basis, free)
        npt.assert_allclose(d.free_logits, free, atol=1e-15)
        assert d.logits[basis.K] == 0.0


class TestParametric:
    def test_standard_normal_mode(self):
        assert NormalDensity(0.0, 1.0).pdf(0.0) == pytest.approx(0.3989423, abs=1e-7)

    def test_normal_cdf_symmetry(self):
        d = NormalDensity(0.0, 1.0)
        assert d.cdf(0.0) == pytest.approx(0.5)
        assert d.cdf(-50.0) == pytest.approx(0.0, abs=1e-12)
        assert d.cdf(50.0) == pytest.approx(1.0, abs=1e-12)

    def test_mixture_validation(self):
        with pytest.raises(ValueError):
            NormalMixtureDensity(0, 1, 1, 1, weight=1.0)
        with pytest.raises(ValueError):
            NormalMixtureDensity(0, -1, 1, 1, weight=0.5)

    def test_near_degenerate_mixture_matches_component(self):
        d = NormalMixtureDensity(2.0, 0.5, -10.0, 1.0, weight=1.0 - 1e-12)
        draws = d.sample(np.random.default_rng(0), size=10_000)
        stat = kstest(draws, "norm", args=(2.0, 0.5))
        assert stat.pvalue > 0.01

    def test_mixture_moments(self):
        d = NormalMixtureDensity(1.0, 0.5, -2.0, 2.0, weight=0.3)
        assert d.mean() == pytest.approx(0.3 * 1.0 + 0.7 * -2.0)
        val, _ = quad(lambda x: x * x * d.pdf(x), -30, 30, limit=300)
        assert d.second_moment() == pytest.approx(val, rel=1e-8)

    def test_cdf_is_antiderivative_of_pdf(self, basis):
        rng = np.random.default_rng(5)
        dens = [
            NormalDensity(0.5, 1.3),
            NormalMixtureDensity(-1, 0.7, 2, 1.1, weight=0.4),
            SplineDensity(basis, rng.normal(size=basis.size)),
        ]
        eps = 1e-6
        for d in dens:
            lo, hi = d.effective_support()
            for x in rng.uniform(lo + 1, hi - 1, size=20):
                deriv = (d.cdf(x + eps) - d.cdf(x - eps)) / (2 * eps)
                assert deriv == pytest.approx(d.pdf(x), abs=1e-4)


class TestKld:
    def test_identity_is_zero(self, basis):
        d = SplineDensity(basis, np.linspace(-0.5, 0.5, basis.size))
        assert kld(d, d) == pytest.approx(0.0, abs=1e-9)

    def test_mean_shift_closed_form(self):
        assert kld(NormalDensity(0, 1), NormalDensity(1, 1)) == pytest.approx(0.5, abs=1e-6)

    def test_scale_change_closed_form(self):
        expected = gaussian_kld(0, 1, 0, 2)
        assert kld(NormalDensity(0, 1), NormalDensity(0, 2)) == pytest.approx(expected, abs=1e-6)

    def test_nonnegative_on_random_pairs(self, basis):
        rng = np.random.default_rng(6)
        for _ in range(10):
            p = SplineDensity(basis, rng.normal(size=basis.size))
            q = SplineDensity(basis, rng.normal(size=basis.size))
            assert kld(p, q) >= 0.0

    def test_support_mismatch_gives_inf(self, basis):
        narrow = build_basis(10.0, 12.0, 4)
        p = NormalDensity(0.0, 1.0)
        q = SplineDensity(narrow, np.zeros(narrow.size))
        assert kld(p, q) == np.inf


def test_softmax_weight_perturbation_keeps_simplex():
    rng = np.random.default_rng(8)
    b = rng.normal(size=31)
    for k in range(0, 31, 5):
        bp = b.copy()
        bp[k] += 0.37
        w = softmax_weights(bp)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(w > 0)
