import numpy as np
import numpy.testing as npt
import pytest
from scipy.integrate import quad

from splinehmm.densities import NormalDensity
from splinehmm.hmm import HmmModel, stationary_distribution
from splinehmm.simulation import (
    CompetitorRun,
    RunResult,
    SimScenario,
    aggregate_runs,
    competitor_klds,
    default_scenario,
    run_study,
    simulate_series,
)


class TestScenario:
    def test_default_truth_properties(self):
        scenario = default_scenario()
        truth = scenario.truth()
        npt.assert_allclose(stationary_distribution(truth.gamma), [0.5, 0.5], atol=1e-14)
        assert scenario.t_len == 800
        assert scenario.basis_k == 15
        assert scenario.n_partitions == 10
        assert scenario.grid_values == (256.0, 512.0, 1024.0, 2048.0, 4096.0, 8192.0, 16384.0)

    def test_state2_has_local_maximum_at_minus_five(self):
        truth = default_scenario().truth()
        d2 = truth.emissions[1]
        assert d2.pdf(-5.0) > d2.pdf(-5.4)
        assert d2.pdf(-5.0) > d2.pdf(-4.6)

    def test_truth_densities_integrate_to_one(self):
        truth = default_scenario().truth()
        for dens in truth.emissions:
            lo, hi = dens.effective_support()
            val, _ = quad(dens.pdf, lo, hi, limit=300)
            assert val == pytest.approx(1.0, abs=1e-8)

    def test_states_overlap_substantially(self):
        truth = default_scenario().truth()
        xs = np.linspace(-2, 4, 200)
        both = np.minimum(truth.emissions[0].pdf(xs), truth.emissions[1].pdf(xs))
        assert np.trapezoid(both, xs) > 0.05  # shared mass between the states

    def test_validation(self):
        with pytest.raises(ValueError):
            SimScenario(runs=0)
        with pytest.raises(ValueError):
            SimScenario(persistence=0.3)


class TestSimulateSeries:
    def test_absorbing_start_stays_in_state_one(self):
        model = HmmModel(
            gamma=np.eye(2),
            emissions=(NormalDensity(0, 1), NormalDensity(5, 1)),
            delta=np.array([1.0, 0.0]),
        )
        x, states = simulate_series(model, 100, np.random.default_rng(0))
        npt.assert_array_equal(states, 0)
        assert x.shape == (100,)

    def test_seed_reproducibility(self):
        truth = default_scenario().truth()
        x1, s1 = simulate_series(truth, 300, np.random.default_rng(9))
        x2, s2 = simulate_series(truth, 300, np.random.default_rng(9))
        npt.assert_array_equal(x1, x2)
        npt.assert_array_equal(s1, s2)


class TestAggregation:
    @staticmethod
    def _fake_run(idx, rng):
        comp = {
            "nonparametric": CompetitorRun(
                gamma_hat=np.array([[0.9, 0.1], [0.1, 0.9]]) + rng.normal(scale=0.005),
                boot_se=(rng.uniform(0.01, 0.02), rng.uniform(0.01, 0.02)),
                ci=((0.85, 0.95), (0.85, 0.95)),
                covered=(bool(rng.random() < 0.95), True),
                klds=(rng.uniform(0, 0.05), rng.uniform(0, 0.05)),
            )
        }
        return RunResult(
            index=idx, competitors=comp,
            selected_states=int(rng.choice([2, 3], p=[0.9, 0.1])),
            lam_selected=(1024.0, 1024.0), failures=(),
        )

    def test_order_invariance_and_frequency_sum(self):
        rng = np.random.default_rng(1)
        scenario = SimScenario(runs=12, competitors=("nonparametric",))
        runs = [self._fake_run(i, rng) for i in range(12)]
        fwd = aggregate_runs(scenario, runs)
        rev = aggregate_runs(scenario, list(reversed(runs)))
        assert fwd.competitors["nonparametric"] == rev.competitors["nonparametric"]
        assert fwd.selection_frequencies == rev.selection_frequencies
        assert sum(fwd.selection_frequencies.values()) == pytest.approx(1.0)

    def test_kld_alignment_with_mean_sorted_states(self):
        truth = default_scenario().truth()
        # a slightly perturbed copy of the truth, states already mean-sorted
        fitted = HmmModel(
            gamma=truth.gamma,
            emissions=(
                NormalDensity(0.1, 1.4),
                truth.emissions[1],
            ),
        )
        klds = competitor_klds(truth, fitted)
        from splinehmm.densities import kld

        assert klds[0] == kld(truth.emissions[0], fitted.emissions[0])
        assert klds[1] == pytest.approx(0.0, abs=1e-9)


class TestRunStudySmoke:
    def test_single_tiny_run_produces_finite_statistics(self):
        scenario = SimScenario(
            runs=1, t_len=150, basis_k=5, grid_values=(64.0, 512.0),
            n_partitions=2, bootstrap_reps=20, state_candidates=(1, 2),
            restarts_final=1, restarts_cv=1, restarts_bootstrap=1, seed=3,
        )
        report = run_study(scenario)
        assert report.runs_completed == 1
        assert sum(report.selection_frequencies.values()) == pytest.approx(1.0)
        for name, summary in report.competitors.items():
            assert np.isfinite(summary.mean_gamma11)
            assert np.isfinite(summary.mean_gamma22)
            assert all(np.isfinite(v) for v in summary.mean_boot_se)
            assert all(np.isfinite(v) for v in summary.mean_klds)
            assert all(v >= 0 for v in summary.mean_klds)
        text = report.to_text()
        assert "selection frequencies" in text
