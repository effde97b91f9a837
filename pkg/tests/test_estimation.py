import numpy as np
import numpy.testing as npt
import pytest

from splinehmm.basis import build_basis
from splinehmm.densities import NormalDensity, SplineDensity
from splinehmm.estimation import (
    FitConfig,
    FitError,
    ParamLayout,
    PenalizedObjective,
    PenaltySpec,
    data_stats,
    fit,
    initial_points,
    roughness_penalty,
)
from splinehmm.hmm import HmmModel, log_likelihood, simulate


@pytest.fixture(scope="module")
def small_basis():
    return build_basis(-4.0, 4.0, 4)


def make_series(rng, t_len=60):
    gamma = np.array([[0.85, 0.15], [0.2, 0.8]])
    truth = HmmModel(gamma=gamma, emissions=(NormalDensity(-1.5, 0.8), NormalDensity(1.5, 0.8)))
    x, _ = simulate(truth, t_len, rng)
    return x


class TestPenalty:
    def test_uniform_weights_zero(self):
        w = np.full(31, 1.0 / 31.0)
        assert roughness_penalty([w], PenaltySpec(lam=1000.0, order=2)) == 0.0

    def test_linear_weights_zero_under_second_order(self):
        raw = np.linspace(1.0, 2.0, 21)
        w = raw / raw.sum()
        assert roughness_penalty([w], PenaltySpec(lam=7.0, order=2)) == pytest.approx(0.0, abs=1e-25)

    def test_hand_computed_first_order(self):
        value = roughness_penalty([np.array([0.5, 0.3, 0.2])], PenaltySpec(lam=2.0, order=1))
        assert value == pytest.approx((2.0 / 2.0) * ((0.3 - 0.5) ** 2 + (0.2 - 0.3) ** 2))
        assert value == pytest.approx(0.05)

    def test_parametric_states_skipped(self):
        w = np.array([0.1, 0.7, 0.2])
        one = roughness_penalty([w, None], PenaltySpec(lam=(3.0, 99.0), order=1))
        assert one == roughness_penalty([w], PenaltySpec(lam=3.0, order=1))

    def test_validation(self):
        with pytest.raises(ValueError):
            PenaltySpec(lam=-1.0)
        with pytest.raises(ValueError):
            PenaltySpec(order=0)
        with pytest.raises(ValueError):
            roughness_penalty([np.array([0.5, 0.5])], PenaltySpec(lam=1.0, order=2))


class TestWorkingVector:
    def test_round_trip(self, small_basis):
        config = FitConfig(
            n_states=3,
            emissions=("spline", "normal", "normal-mixture"),
            basis=small_basis,
        )
        layout = ParamLayout(3, config.families())
        rng = np.random.default_rng(0)
        for _ in range(20):
            vec = rng.normal(scale=1.5, size=layout.dim)
            model = layout.unpack(vec)
            npt.assert_allclose(layout.pack(model), vec, atol=1e-12)

    def test_unpack_always_valid(self, small_basis):
        config = FitConfig(n_states=2, emissions="spline", basis=small_basis)
        layout = ParamLayout(2, config.families())
        rng = np.random.default_rng(1)
        for _ in range(50):
            model = layout.unpack(rng.normal(scale=3.0, size=layout.dim))
            npt.assert_allclose(model.gamma.sum(axis=1), 1.0, atol=1e-12)
            npt.assert_allclose(model.delta @ model.gamma, model.delta, atol=1e-10)
            for d in model.emissions:
                w = d.weights
                assert np.all(w > 0) and w.sum() == pytest.approx(1.0)


class TestObjective:
    def test_zero_lambda_equals_loglik_exactly(self, small_basis):
        rng = np.random.default_rng(2)
        x = make_series(rng)
        config = FitConfig(n_states=2, emissions="spline", basis=small_basis, penalty=PenaltySpec(lam=0.0))
        obj = PenalizedObjective(x, config)
        vec = rng.normal(scale=0.5, size=obj.layout.dim)
        assert obj.value(vec) == log_likelihood(obj.layout.unpack(vec), x)

    def test_doubling_lambda_doubles_penalty_gap(self, small_basis):
        rng = np.random.default_rng(3)
        x = make_series(rng)
        vec = None
        values = {}
        for lam in (0.0, 50.0, 100.0):
            config = FitConfig(
                n_states=2, emissions="spline", basis=small_basis, penalty=PenaltySpec(lam=lam)
            )
            obj = PenalizedObjective(x, config)
            if vec is None:
                vec = np.random.default_rng(4).normal(scale=1.0, size=obj.layout.dim)
            values[lam] = obj.value(vec)
        gap_small = values[0.0] - values[50.0]
        gap_big = values[0.0] - values[100.0]
        assert gap_big == pytest.approx(2.0 * gap_small, rel=1e-12)

    def test_logit_shift_invariance_on_weights(self, small_basis):
        # shifting all logits (including the pinned reference) leaves the
        # weight simplex unchanged, hence likelihood and penalty unchanged
        rng = np.random.default_rng(5)
        full = rng.normal(size=small_basis.size)
        d1 = SplineDensity(small_basis, full)
        d2 = SplineDensity(small_basis, full + 10.0)
        npt.assert_allclose(d1.weights, d2.weights, atol=1e-14)
        x = make_series(rng, t_len=40)
        gamma = np.array([[0.9, 0.1], [0.1, 0.9]])
        m1 = HmmModel(gamma=gamma, emissions=(d1, d1))
        m2 = HmmModel(gamma=gamma, emissions=(d2, d2))
        assert log_likelihood(m1, x) == pytest.approx(log_likelihood(m2, x), abs=1e-12)
        spec = PenaltySpec(lam=10.0, order=2)
        assert roughness_penalty([d1.weights, d1.weights], spec) == pytest.approx(
            roughness_penalty([d2.weights, d2.weights], spec), abs=1e-12
        )

    def test_label_permutation_symmetry(self, small_basis):
        rng = np.random.default_rng(6)
        x = make_series(rng)
        config = FitConfig(
            n_states=2, emissions="spline", basis=small_basis, penalty=PenaltySpec(lam=25.0)
        )
        obj = PenalizedObjective(x, config)
        layout = obj.layout
        vec = rng.normal(scale=0.8, size=layout.dim)
        model = layout.unpack(vec)
        swapped = HmmModel(
            gamma=model.gamma[np.ix_([1, 0], [1, 0])],
            emissions=(model.emissions[1], model.emissions[0]),
        )
        vec_swapped = layout.pack(swapped)
        assert obj.value(vec) == pytest.approx(obj.value(vec_swapped), abs=1e-9)

    @pytest.mark.parametrize(
        "emissions,lam",
        [
            ("spline", 30.0),
            ("normal", 0.0),
            (("normal", "normal-mixture"), 0.0),
            (("spline", "normal"), 12.0),
        ],
    )
    def test_analytic_gradient_matches_central_differences(self, small_basis, emissions, lam):
        rng = np.random.default_rng(7)
        x = make_series(rng, t_len=50)
        x[rng.random(x.size) < 0.15] = np.nan  # exercise the missing-data path
        config = FitConfig(
            n_states=2, emissions=emissions, basis=small_basis, penalty=PenaltySpec(lam=lam)
        )
        obj = PenalizedObjective(x, config)
        for trial in range(3):
            vec = rng.normal(scale=0.7, size=obj.layout.dim)
            _, grad = obj.value_and_grad(vec)
            grad = -grad
            h = 1e-6
            for k in range(obj.layout.dim):
                e = np.zeros(obj.layout.dim)
                e[k] = h
                central = (obj.value(vec + e) - obj.value(vec - e)) / (2 * h)
                assert grad[k] == pytest.approx(central, rel=2e-5, abs=2e-6)

    def test_central_vs_forward_differences(self, small_basis):
        # objective-evaluation smoke check via two independent FD schemes
        rng = np.random.default_rng(8)
        x = make_series(rng, t_len=40)
        config = FitConfig(
            n_states=2, emissions="spline", basis=small_basis, penalty=PenaltySpec(lam=5.0)
        )
        obj = PenalizedObjective(x, config)
        vec = rng.normal(scale=0.5, size=obj.layout.dim)
        h = 1e-5
        base = obj.value(vec)
        for k in range(0, obj.layout.dim, 3):
            e = np.zeros(obj.layout.dim)
            e[k] = h
            central = (obj.value(vec + e) - obj.value(vec - e)) / (2 * h)
            forward = (obj.value(vec + e) - base) / h
            assert forward == pytest.approx(central, rel=1e-4, abs=1e-3)


class TestFit:
    def test_single_state_normal_recovers_closed_form_mle(self):
        rng = np.random.default_rng(9)
        x = rng.normal(2.5, 1.7, size=400)
        config = FitConfig(n_states=1, emissions="normal", restarts=2, seed=1)
        result = fit(x, config)
        dens = result.model.emissions[0]
        assert dens.loc == pytest.approx(x.mean(), abs=1e-6)
        assert dens.scale == pytest.approx(x.std(ddof=0), abs=1e-6)

    def test_reported_best_dominates_all_restarts(self, small_basis):
        rng = np.random.default_rng(10)
        x = make_series(rng, t_len=120)
        config = FitConfig(
            n_states=2, emissions="normal", restarts=6, seed=2, penalty=PenaltySpec(lam=0.0)
        )
        result = fit(x, config)
        for record in result.restarts:
            assert result.penalized_loglik >= record.penalized_loglik - 1e-6
        assert result.converged

    def test_states_sorted_by_emission_mean(self, small_basis):
        rng = np.random.default_rng(11)
        x = make_series(rng, t_len=200)
        config = FitConfig(n_states=2, emissions="normal", restarts=4, seed=3)
        result = fit(x, config)
        means = [d.mean() for d in result.model.emissions]
        assert means == sorted(means)

    def test_determinism_under_seed(self, small_basis):
        rng = np.random.default_rng(12)
        x = make_series(rng, t_len=80)
        config = FitConfig(
            n_states=2, emissions="spline", basis=small_basis,
            penalty=PenaltySpec(lam=100.0), restarts=2, seed=7,
        )
        r1 = fit(x, config)
        r2 = fit(x, config)
        npt.assert_array_equal(r1.params, r2.params)
        assert r1.penalized_loglik == r2.penalized_loglik

    def test_huge_lambda_flattens_second_differences(self, small_basis):
        rng = np.random.default_rng(13)
        x = make_series(rng, t_len=150)
        config = FitConfig(
            n_states=2, emissions="spline", basis=small_basis,
            penalty=PenaltySpec(lam=1e8), restarts=2, seed=4,
        )
        result = fit(x, config)
        for w in result.weights_per_state():
            assert np.max(np.abs(np.diff(w, n=2))) < 1e-4

    def test_penalized_at_most_unpenalized(self, small_basis):
        rng = np.random.default_rng(14)
        x = make_series(rng, t_len=100)
        config = FitConfig(
            n_states=2, emissions="spline", basis=small_basis,
            penalty=PenaltySpec(lam=500.0), restarts=2, seed=5,
        )
        result = fit(x, config)
        assert result.penalized_loglik <= result.loglik

    def test_warm_start_is_used(self, small_basis):
        rng = np.random.default_rng(15)
        x = make_series(rng, t_len=80)
        config = FitConfig(n_states=2, emissions="normal", restarts=1, seed=6)
        first = fit(x, config)
        again = fit(x, config, extra_starts=[first.params])
        assert again.penalized_loglik >= first.penalized_loglik - 1e-9

    def test_short_series_raises(self):
        config = FitConfig(n_states=3, emissions="normal")
        with pytest.raises(ValueError):
            fit(np.array([1.0, 2.0]), config)


class TestInitialPoints:
    def test_all_points_unpack_to_valid_models(self, small_basis):
        config = FitConfig(n_states=3, emissions="spline", basis=small_basis)
        layout = ParamLayout(3, config.families())
        stats = data_stats(np.random.default_rng(16).normal(size=200))
        points = initial_points(layout, 50, np.random.default_rng(17), stats)
        for vec in points:
            model = layout.unpack(vec)
            npt.assert_allclose(model.gamma.sum(axis=1), 1.0, atol=1e-12)
            assert 0.6 - 1e-9 <= model.gamma[0, 0] <= 0.98 + 1e-9

    def test_500_draws_distinct(self, small_basis):
        config = FitConfig(n_states=2, emissions="normal")
        layout = ParamLayout(2, config.families())
        stats = data_stats(np.random.default_rng(18).normal(size=100))
        points = initial_points(layout, 500, np.random.default_rng(19), stats)
        assert len({tuple(p) for p in points}) == 500

    def test_bimodal_data_recovered_from_most_restarts(self):
        rng = np.random.default_rng(20)
        truth = HmmModel(
            gamma=np.array([[0.9, 0.1], [0.1, 0.9]]),
            emissions=(NormalDensity(-5.0, 1.0), NormalDensity(5.0, 1.0)),
        )
        x, _ = simulate(truth, 300, rng)
        config = FitConfig(n_states=2, emissions="normal", restarts=1, maxiter=500)
        hits = 0
        n_trials = 40
        for s in range(n_trials):
            result = fit(x, FitConfig(**{**config.__dict__, "seed": s, "emissions": "normal"}))
            means = sorted(d.mean() for d in result.model.emissions)
            if abs(means[0] - -5.0) < 1.0 and abs(means[1] - 5.0) < 1.0:
                hits += 1
        assert hits >= 0.95 * n_trials
