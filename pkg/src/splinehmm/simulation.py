"""Simulation study harness: two-state truth with overlapping emissions,
spline and parametric competitors, bootstrap uncertainty, KLD accuracy and
CV-based state-count selection, replicated over independent runs.

The truth has a symmetric persistent chain (diagonal 0.9 by default), a
unimodal state 1 and a bimodal state 2 whose minor mode sits far in the left
tail at -5, so the marginal mixture offers little visual hint that state 2
is bimodal.  The concrete densities are implementation choices; study
conclusions are about orderings and magnitudes, not exact constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._parallel import parallel_map
from .basis import basis_for_data
from .densities import NormalDensity, NormalMixtureDensity, kld
from .estimation import FitConfig, FitError, PenaltySpec, fit
from .hmm import HmmModel, simulate
from .inference import bootstrap, tpm_intervals
from .selection import make_partitions, select_num_states

simulate_series = simulate  # chain first, then emissions; returns both

NONPARAMETRIC = "nonparametric"
CORRECT_PARAMETRIC = "correct-parametric"
WRONG_PARAMETRIC = "wrong-parametric"


@dataclass(frozen=True)
class SimScenario:
    persistence: float = 0.9
    state2_shift: float = 0.0  # overlap knob: shifts the bimodal state
    t_len: int = 800
    runs: int = 50
    basis_k: int = 15
    grid_values: tuple = (256.0, 512.0, 1024.0, 2048.0, 4096.0, 8192.0, 16384.0)
    n_partitions: int = 10
    calib_fraction: float = 0.9
    bootstrap_reps: int = 100
    level: float = 0.95
    state_candidates: tuple = (1, 2, 3)
    competitors: tuple = (NONPARAMETRIC, CORRECT_PARAMETRIC, WRONG_PARAMETRIC)
    seed: int = 0
    restarts_final: int = 5
    restarts_cv: int = 1
    restarts_bootstrap: int = 1
    cv_ftol: float = 1e-7

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("need at least one run")
        if not 0.5 < self.persistence < 1.0:
            raise ValueError("persistence must lie in (0.5, 1)")

    def truth(self) -> HmmModel:
        p = self.persistence
        gamma = np.array([[p, 1.0 - p], [1.0 - p, p]])
        s = self.state2_shift
        return HmmModel(
            gamma=gamma,
            emissions=(
                NormalDensity(0.0, 1.5),
                NormalMixtureDensity(3.0 + s, 1.0, -5.0 + s, 1.0, 0.85),
            ),
        )


def default_scenario(runs: int = 50, seed: int = 0) -> SimScenario:
    return SimScenario(runs=runs, seed=seed)


@dataclass(frozen=True)
class CompetitorRun:
    gamma_hat: np.ndarray
    boot_se: tuple  # SE of the two diagonal entries
    ci: tuple  # ((lo, hi), (lo, hi)) for the diagonal entries
    covered: tuple  # truth inside the CI, per diagonal entry
    klds: tuple  # per-state KLD from truth


@dataclass(frozen=True)
class RunResult:
    index: int
    competitors: dict
    selected_states: int
    lam_selected: tuple
    failures: tuple


def competitor_klds(truth: HmmModel, fitted: HmmModel) -> tuple:
    """Per-state KLD from the truth, both models already mean-sorted."""
    return tuple(
        kld(t, f) for t, f in zip(truth.emissions, fitted.emissions)
    )


def _competitor_config(name, scenario, basis, lam):
    if name == NONPARAMETRIC:
        return FitConfig(
            n_states=2, emissions="spline", basis=basis,
            penalty=PenaltySpec(lam=lam), restarts=scenario.restarts_final,
        )
    if name == CORRECT_PARAMETRIC:
        return FitConfig(
            n_states=2, emissions=("normal", "normal-mixture"),
            restarts=scenario.restarts_final,
        )
    if name == WRONG_PARAMETRIC:
        return FitConfig(
            n_states=2, emissions=("normal", "normal"), restarts=scenario.restarts_final,
        )
    raise ValueError(f"unknown competitor {name!r}")


def _single_run(args) -> RunResult:
    scenario, run_idx = args
    truth = scenario.truth()
    root = np.random.SeedSequence((scenario.seed, 1299721, run_idx))
    sim_seed, part_seed, cv_seed, fit_seed, boot_seed = (
        int(s.generate_state(1)[0]) for s in root.spawn(5)
    )
    x, _ = simulate(truth, scenario.t_len, np.random.default_rng(sim_seed))
    basis = basis_for_data(x, scenario.basis_k)
    partitions = make_partitions(
        scenario.t_len, scenario.n_partitions, scenario.calib_fraction,
        np.random.default_rng(part_seed),
    )
    failures = []

    def make_config(n):
        return FitConfig(
            n_states=n, emissions="spline", basis=basis,
            restarts=scenario.restarts_cv, seed=cv_seed, ftol=scenario.cv_ftol,
        )

    selection = select_num_states(
        x, scenario.state_candidates, scenario.grid_values, partitions, make_config
    )
    lam_selected = selection.reports[2].selected if 2 in selection.reports else None

    competitors = {}
    for name in scenario.competitors:
        lam = lam_selected if name == NONPARAMETRIC else 0.0
        config = replace(_competitor_config(name, scenario, basis, lam), seed=fit_seed)
        warm = []
        if name == NONPARAMETRIC and lam_selected is not None:
            cell = selection.reports[2].selected_cell
            warm = [v for v in cell.params if v is not None][:1]
        try:
            result = fit(x, config, extra_starts=warm)
        except (FitError, ValueError) as exc:
            failures.append((name, "fit", str(exc)))
            continue
        ensemble = bootstrap(
            result.model, scenario.t_len, scenario.bootstrap_reps,
            replace(config, restarts=scenario.restarts_bootstrap),
            seed=boot_seed, warm_start=True,
        )
        try:
            intervals = tpm_intervals(ensemble, scenario.level)
        except ValueError as exc:
            failures.append((name, "bootstrap", str(exc)))
            continue
        diag_reps = np.array([[m.gamma[0, 0], m.gamma[1, 1]] for m in ensemble.models])
        ci = tuple((float(intervals[i, i, 0]), float(intervals[i, i, 1])) for i in range(2))
        competitors[name] = CompetitorRun(
            gamma_hat=result.model.gamma,
            boot_se=tuple(np.std(diag_reps, axis=0, ddof=1)),
            ci=ci,
            covered=tuple(lo <= scenario.persistence <= hi for lo, hi in ci),
            klds=competitor_klds(truth, result.model),
        )

    return RunResult(
        index=run_idx,
        competitors=competitors,
        selected_states=selection.chosen,
        lam_selected=tuple(lam_selected) if lam_selected is not None else (),
        failures=tuple(failures),
    )


@dataclass(frozen=True)
class CompetitorSummary:
    n_runs: int
    mean_gamma11: float
    mean_gamma22: float
    sd_gamma11: float
    sd_gamma22: float
    mean_boot_se: tuple
    coverage: tuple
    mean_klds: tuple


@dataclass(frozen=True)
class SimReport:
    scenario: SimScenario
    competitors: dict
    selection_frequencies: dict
    runs_completed: int
    failures: tuple

    def to_dict(self) -> dict:
        return {
            "runs_completed": self.runs_completed,
            "selection_frequencies": {str(k): v for k, v in self.selection_frequencies.items()},
            "competitors": {
                name: {
                    "n_runs": s.n_runs,
                    "mean_gamma11": s.mean_gamma11,
                    "mean_gamma22": s.mean_gamma22,
                    "sd_gamma11": s.sd_gamma11,
                    "sd_gamma22": s.sd_gamma22,
                    "mean_boot_se": list(s.mean_boot_se),
                    "coverage": list(s.coverage),
                    "mean_klds": list(s.mean_klds),
                }
                for name, s in self.competitors.items()
            },
            "failures": [list(f) for f in self.failures],
        }

    def to_text(self) -> str:
        lines = [
            f"simulation study: {self.runs_completed} runs, "
            f"T={self.scenario.t_len}, K={self.scenario.basis_k}, "
            f"C={self.scenario.n_partitions}, B={self.scenario.bootstrap_reps}",
            "",
            f"{'competitor':<22}{'g11 (sd)':<18}{'g22 (sd)':<18}"
            f"{'boot SE':<16}{'coverage':<14}{'KLD s1/s2':<16}",
        ]
        for name, s in self.competitors.items():
            lines.append(
                f"{name:<22}"
                f"{s.mean_gamma11:.3f} ({s.sd_gamma11:.3f})   "
                f"{s.mean_gamma22:.3f} ({s.sd_gamma22:.3f})   "
                f"{s.mean_boot_se[0]:.3f}/{s.mean_boot_se[1]:.3f}   "
                f"{s.coverage[0]:.2f}/{s.coverage[1]:.2f}     "
                f"{s.mean_klds[0]:.3f}/{s.mean_klds[1]:.3f}"
            )
        lines.append("")
        freq = ", ".join(f"N={k}: {v:.3f}" for k, v in sorted(self.selection_frequencies.items()))
        lines.append(f"state-count selection frequencies: {freq}")
        return "\n".join(lines)


def aggregate_runs(scenario: SimScenario, results) -> SimReport:
    """Order-invariant aggregation of per-run results."""
    results = sorted(results, key=lambda r: r.index)
    competitors = {}
    for name in scenario.competitors:
        rows = [r.competitors[name] for r in results if name in r.competitors]
        if not rows:
            continue
        g11 = np.array([c.gamma_hat[0, 0] for c in rows])
        g22 = np.array([c.gamma_hat[1, 1] for c in rows])
        competitors[name] = CompetitorSummary(
            n_runs=len(rows),
            mean_gamma11=float(g11.mean()),
            mean_gamma22=float(g22.mean()),
            sd_gamma11=float(g11.std(ddof=1)) if len(rows) > 1 else 0.0,
            sd_gamma22=float(g22.std(ddof=1)) if len(rows) > 1 else 0.0,
            mean_boot_se=tuple(np.mean([c.boot_se for c in rows], axis=0)),
            coverage=tuple(np.mean([c.covered for c in rows], axis=0)),
            mean_klds=tuple(np.mean([c.klds for c in rows], axis=0)),
        )
    chosen = [r.selected_states for r in results]
    freqs = {
        int(n): chosen.count(n) / len(chosen) for n in scenario.state_candidates
    }
    failures = tuple((r.index,) + f for r in results for f in r.failures)
    return SimReport(
        scenario=scenario,
        competitors=competitors,
        selection_frequencies=freqs,
        runs_completed=len(results),
        failures=failures,
    )


def run_study(scenario: SimScenario, workers: int = 1) -> SimReport:
    """Run the full study; per-run seeds split deterministically from the
    scenario seed, so the report does not depend on worker scheduling."""
    jobs = [(scenario, r) for r in range(scenario.runs)]
    results = parallel_map(_single_run, jobs, workers)
    return aggregate_runs(scenario, results)
