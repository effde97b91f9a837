import numpy as np
import numpy.testing as npt
import pytest
from scipy.integrate import quad

from splinehmm.basis import DEGREE, build_basis, basis_for_data


def deboor_recursive(x, degree, i, knots):
    """Naive Cox-de Boor recurrence, coded independently of the package."""
    if degree == 0:
        return 1.0 if knots[i] <= x < knots[i + 1] else 0.0
    left = 0.0
    if knots[i + degree] != knots[i]:
        left = (x - knots[i]) / (knots[i + degree] - knots[i]) * deboor_recursive(x, degree - 1, i, knots)
    right = 0.0
    if knots[i + degree + 1] != knots[i + 1]:
        right = (
            (knots[i + degree + 1] - x)
            / (knots[i + degree + 1] - knots[i + 1])
            * deboor_recursive(x, degree - 1, i + 1, knots)
        )
    return left + right


def oracle_values(basis, x):
    """Standardized basis values at scalar x via the recursive oracle."""
    knots = basis.grid.knots
    return np.array(
        [deboor_recursive(x, DEGREE, j, knots) / basis.h for j in range(basis.size)]
    )


class TestConstruction:
    def test_paper_sizes(self):
        assert build_basis(-8.0, 7.0, 15).size == 31
        assert build_basis(0.0, 6.0, 25).size == 51

    def test_support_covers_data_range(self):
        basis = build_basis(-2.0, 3.0, 5)
        lo, hi = basis.full_support
        assert lo <= -2.0 and hi >= 3.0
        assert basis.grid.knots[0] == pytest.approx(-2.0 - 3 * basis.h)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            build_basis(0.0, np.inf, 5)
        with pytest.raises(ValueError):
            build_basis(1.0, 1.0, 5)
        with pytest.raises(ValueError):
            build_basis(0.0, 1.0, 1)

    def test_margin_rule(self):
        rng = np.random.default_rng(0)
        x = rng.normal(2.0, 3.0, size=500)
        basis = basis_for_data(x, 15)
        sd = np.std(x, ddof=1)
        assert basis.grid.lower == pytest.approx(x.min() - 0.5 * sd)
        assert basis.grid.upper == pytest.approx(x.max() + 0.5 * sd)


class TestEvaluation:
    def test_matches_deboor_oracle(self):
        basis = build_basis(-4.0, 9.0, 8)
        rng = np.random.default_rng(42)
        lo, hi = basis.full_support
        xs = rng.uniform(lo - 1.0, hi + 1.0, size=1000)
        for x in xs:
            npt.assert_allclose(basis.evaluate(x), oracle_values(basis, x), atol=1e-12)

    def test_outside_support_is_zero(self):
        basis = build_basis(0.0, 1.0, 4)
        lo, hi = basis.full_support
        npt.assert_array_equal(basis.evaluate(lo - 0.5), 0.0)
        npt.assert_array_equal(basis.evaluate(hi + 0.5), 0.0)
        npt.assert_array_equal(basis.evaluate(hi), 0.0)  # support is half-open

    def test_at_most_four_nonzero_and_nonnegative(self):
        basis = build_basis(-1.0, 2.0, 6)
        rng = np.random.default_rng(7)
        xs = rng.uniform(*basis.full_support, size=300)
        vals = basis.evaluate(xs)
        assert np.all(vals >= 0.0)
        assert np.all((vals > 0.0).sum(axis=1) <= 4)

    def test_partition_of_unity_at_interior_knot(self):
        basis = build_basis(0.0, 10.0, 6)
        x = basis.grid.lower + 3 * basis.h  # an interior knot
        vals = basis.evaluate(x)
        # unstandardized B-splines (multiply the integral h back) sum to one
        assert (vals * basis.h).sum() == pytest.approx(1.0, abs=1e-12)
        # exactly the splines whose support contains the knot are nonzero
        nonzero = np.nonzero(vals)[0]
        for j in nonzero:
            lo, hi = basis.support(j)
            assert lo < x < hi

    def test_center_basis_is_max_at_own_center(self):
        basis = build_basis(-5.0, 5.0, 10)
        center = basis.centers()[basis.K]
        vals = basis.evaluate(center)
        assert vals[basis.K] == pytest.approx(vals.max())
        assert vals[basis.K] == pytest.approx((2.0 / 3.0) / basis.h)

    def test_vector_and_scalar_agree(self):
        basis = build_basis(0.0, 4.0, 5)
        xs = np.linspace(-1.0, 5.0, 37)
        mat = basis.evaluate(xs)
        for i, x in enumerate(xs):
            npt.assert_array_equal(mat[i], basis.evaluate(x))

    def test_nan_gives_zero_row(self):
        basis = build_basis(0.0, 4.0, 5)
        npt.assert_array_equal(basis.evaluate(np.nan), 0.0)


class TestIntegralsAndMoments:
    def test_each_density_integrates_to_one(self):
        basis = build_basis(-3.0, 3.0, 5)
        knots = basis.grid.knots
        for j in range(basis.size):
            lo, hi = basis.support(j)
            val, _ = quad(lambda x: basis.evaluate(x)[j], lo, hi, points=knots[j + 1 : j + 4], limit=100)
            assert val == pytest.approx(1.0, abs=1e-8)

    def test_cumulative_matches_quadrature(self):
        basis = build_basis(-2.0, 2.0, 4)
        rng = np.random.default_rng(3)
        for j in (0, basis.K, basis.size - 1):
            lo, hi = basis.support(j)
            for x in rng.uniform(lo, hi, size=5):
                val, _ = quad(lambda t: basis.evaluate(t)[j], lo, x, limit=100)
                assert basis.cumulative(x)[j] == pytest.approx(val, abs=1e-9)

    def test_mean_is_support_midpoint(self):
        basis = build_basis(1.0, 9.0, 6)
        mean, _ = basis.moments()
        for j in range(basis.size):
            lo, hi = basis.support(j)
            assert mean[j] == pytest.approx((lo + hi) / 2.0)

    def test_second_moment_vs_quadrature(self):
        basis = build_basis(-1.0, 3.0, 4)
        _, second = basis.moments()
        for j in (0, 3, basis.size - 1):
            lo, hi = basis.support(j)
            val, _ = quad(lambda x: x * x * basis.evaluate(x)[j], lo, hi, limit=200)
            assert second[j] == pytest.approx(val, rel=1e-9)

    def test_second_moment_vs_rejection_sampling(self):
        # Monte Carlo oracle independent of the package's own sampler.
        basis = build_basis(0.0, 5.0, 4)
        j = basis.K
        lo, hi = basis.support(j)
        peak = (2.0 / 3.0) / basis.h
        rng = np.random.default_rng(11)
        accepted = []
        while len(accepted) < 200_000:
            xs = rng.uniform(lo, hi, size=100_000)
            keep = rng.uniform(0.0, peak, size=xs.size) < basis.evaluate(xs)[:, j]
            accepted.extend(xs[keep])
        draws = np.asarray(accepted[:200_000])
        mc = np.mean(draws**2)
        se = np.std(draws**2, ddof=1) / np.sqrt(draws.size)
        _, second = basis.moments()
        assert abs(mc - second[j]) < 3 * se

    def test_translation_equivariance(self):
        shift = 2.5
        a = build_basis(0.0, 4.0, 5)
        b = build_basis(0.0 + shift, 4.0 + shift, 5)
        ma, _ = a.moments()
        mb, _ = b.moments()
        npt.assert_allclose(mb - ma, shift, atol=1e-12)

    def test_sample_component_mean(self):
        basis = build_basis(0.0, 6.0, 4)
        rng = np.random.default_rng(5)
        draws = basis.sample_component(2, rng, size=50_000)
        mean, second = basis.moments()
        se = np.sqrt((second[2] - mean[2] ** 2) / draws.size)
        assert abs(draws.mean() - mean[2]) < 4 * se
