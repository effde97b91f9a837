"""Cross-validation machinery: random calibration/validation partitions,
out-of-sample scoring, the greedy grid walk over smoothing vectors, and
CV-based choice of the number of states.

Scoring a smoothing vector on one partition means fitting with the
validation points masked as missing, then evaluating the log-likelihood of
the series with the calibration points masked instead; missing observations
contribute identity factors to the likelihood, so both stages run on series
of the original length.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ._parallel import parallel_map
from .estimation import FitConfig, FitError, fit
from .hmm import log_likelihood


@dataclass(frozen=True)
class Partition:
    """Disjoint calibration/validation index sets.

    ``make_partitions`` always produces sets that cover ``0..T-1``.  A
    partition with both sets empty masks nothing in either stage and is the
    degenerate mode used to check the masking identity in tests.
    """

    calibration: np.ndarray
    validation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "calibration", np.asarray(self.calibration, dtype=np.int64))
        object.__setattr__(self, "validation", np.asarray(self.validation, dtype=np.int64))
        if np.intersect1d(self.calibration, self.validation).size:
            raise ValueError("calibration and validation sets must be disjoint")


def make_partitions(t_len: int, count: int, calib_fraction: float, rng: np.random.Generator):
    """``count`` independent uniform-random partitions with roughly
    ``calib_fraction`` of the indices in the calibration set."""
    if not 0.0 < calib_fraction < 1.0:
        raise ValueError("calibration fraction must lie in (0, 1)")
    if count < 1:
        raise ValueError("need at least one partition")
    n_calib = int(round(calib_fraction * t_len))
    if n_calib >= t_len:
        raise ValueError("validation set is empty at this fraction")
    if n_calib == 0:
        raise ValueError("calibration set is empty at this fraction")
    out = []
    for _ in range(count):
        perm = rng.permutation(t_len)
        out.append(
            Partition(calibration=np.sort(perm[:n_calib]), validation=np.sort(perm[n_calib:]))
        )
    return out


def mask_at(series, idx) -> np.ndarray:
    x = np.array(series, dtype=float, copy=True)
    x[np.asarray(idx, dtype=np.int64)] = np.nan
    return x


@dataclass(frozen=True)
class CvCell:
    """Scores for one smoothing vector across all partitions."""

    lam: tuple
    scores: tuple  # one float per partition, NaN where the fit failed
    params: tuple  # per-partition fitted working vectors (None where failed)
    excluded: tuple  # indices of partitions whose fit failed

    @property
    def mean_score(self) -> float:
        good = [s for s in self.scores if np.isfinite(s)]
        return float(np.mean(good)) if good else -np.inf


def _fit_and_score_job(args):
    series, partition, config, warm = args
    fit_series = mask_at(series, partition.validation)
    score_series = mask_at(series, partition.calibration)
    extra = [warm] if warm is not None else []
    try:
        result = fit(fit_series, config, extra_starts=extra)
    except (FitError, ValueError) as exc:
        return np.nan, None, str(exc)
    return log_likelihood(result.model, score_series), result.params, None


class CvScorer:
    """Fits and scores smoothing vectors over a fixed set of partitions.

    Per-partition fit seeds derive only from the base seed and the partition
    index, so random starting points are shared across smoothing vectors (a
    paired comparison); warm starts from the incumbent cell are added on top.
    """

    def __init__(self, series, partitions, config: FitConfig, workers: int = 1):
        self.series = np.asarray(series, dtype=float)
        self.partitions = list(partitions)
        self.config = config
        self.workers = workers
        self._seeds = [
            int(np.random.SeedSequence((config.seed, 7919, p)).generate_state(1)[0])
            for p in range(len(self.partitions))
        ]

    def score(self, lam, warm_cell: CvCell | None = None) -> CvCell:
        lam = tuple(float(v) for v in np.atleast_1d(lam))
        jobs = []
        for p, partition in enumerate(self.partitions):
            config = replace(
                self.config,
                penalty=replace(self.config.penalty, lam=lam),
                seed=self._seeds[p],
            )
            warm = None
            if warm_cell is not None and warm_cell.params[p] is not None:
                warm = warm_cell.params[p]
            jobs.append((self.series, partition, config, warm))
        results = parallel_map(_fit_and_score_job, jobs, self.workers)
        scores, params, excluded = [], [], []
        for p, (score, vec, err) in enumerate(results):
            scores.append(score)
            params.append(vec)
            if err is not None:
                excluded.append(p)
                warnings.warn(f"partition {p} excluded from CV score: {err}")
        if len(excluded) == len(self.partitions):
            raise FitError("every partition failed during cross-validation", ())
        return CvCell(lam=lam, scores=tuple(scores), params=tuple(params), excluded=tuple(excluded))


def cv_score(series, lam, partitions, config: FitConfig, workers: int = 1) -> float:
    """Mean validation log-likelihood of one smoothing vector."""
    return CvScorer(series, partitions, config, workers).score(lam).mean_score


@dataclass(frozen=True)
class SmoothingGrid:
    """Per-state ordered candidate lists; the grid is their product."""

    candidates: tuple  # tuple of tuples, one per state

    def __post_init__(self):
        cands = tuple(tuple(float(v) for v in c) for c in self.candidates)
        for c in cands:
            arr = np.asarray(c)
            if arr.size == 0 or np.any(arr < 0) or np.any(np.diff(arr) <= 0):
                raise ValueError("candidate values must be nonnegative and strictly increasing")
        object.__setattr__(self, "candidates", cands)

    @classmethod
    def shared(cls, values, n_states: int) -> "SmoothingGrid":
        return cls(candidates=tuple(tuple(float(v) for v in values) for _ in range(n_states)))

    @property
    def n_states(self) -> int:
        return len(self.candidates)

    def lam_at(self, idx) -> tuple:
        return tuple(self.candidates[d][i] for d, i in enumerate(idx))

    def index_of(self, lam) -> tuple:
        idx = []
        for d, v in enumerate(lam):
            matches = [i for i, c in enumerate(self.candidates[d]) if c == float(v)]
            if not matches:
                raise ValueError(f"{v} is not a candidate value for state {d}")
            idx.append(matches[0])
        return tuple(idx)

    def neighbors(self, idx):
        """Direct neighbors: one step in exactly one coordinate."""
        out = []
        for d in range(len(idx)):
            for step in (-1, 1):
                j = idx[d] + step
                if 0 <= j < len(self.candidates[d]):
                    out.append(tuple(idx[k] if k != d else j for k in range(len(idx))))
        return out


@dataclass
class CvReport:
    """Everything the smoothing search saw: per-cell scores, the walk path,
    cache statistics, boundary extensions and partition exclusions."""

    grid: SmoothingGrid
    cells: dict = field(default_factory=dict)  # lam tuple -> CvCell
    trajectory: list = field(default_factory=list)
    diagonal: list = field(default_factory=list)
    selected: tuple | None = None
    n_fits: int = 0
    cache_hits: int = 0
    extensions: list = field(default_factory=list)

    @property
    def mean_scores(self) -> dict:
        return {lam: cell.mean_score for lam, cell in self.cells.items()}

    @property
    def selected_cell(self) -> CvCell:
        return self.cells[self.selected]


def _walk(report, scorer, grid, start_idx, extend, max_steps):
    candidates = [list(c) for c in grid.candidates]

    def live_grid():
        return SmoothingGrid(candidates=tuple(tuple(c) for c in candidates))

    def get_cell(lam, warm):
        lam = tuple(lam)
        if lam in report.cells:
            report.cache_hits += 1
            return report.cells[lam]
        cell = scorer.score(lam, warm)
        report.cells[lam] = cell
        report.n_fits += 1
        return cell

    g = live_grid()
    idx = tuple(start_idx)
    current = get_cell(g.lam_at(idx), None)
    report.trajectory.append(current.lam)
    for _ in range(max_steps):
        if extend:
            # hitting a boundary grows the candidate list by doubling above
            # or halving below, mirroring how the published walks escaped
            # their initial grids
            changed = False
            for d in range(len(idx)):
                if idx[d] == len(candidates[d]) - 1:
                    candidates[d].append(candidates[d][-1] * 2.0)
                    report.extensions.append((d, candidates[d][-1]))
                    changed = True
                if idx[d] == 0 and candidates[d][0] > 0:
                    candidates[d].insert(0, candidates[d][0] / 2.0)
                    report.extensions.append((d, candidates[d][0]))
                    idx = tuple(idx[k] + (1 if k == d else 0) for k in range(len(idx)))
                    changed = True
            if changed:
                g = live_grid()
        options = [(current, idx)]
        for nb in g.neighbors(idx):
            cell = get_cell(g.lam_at(nb), current)
            options.append((cell, nb))
        best_cell, best_idx = max(options, key=lambda t: t[0].mean_score)
        if best_idx == idx:
            break
        current, idx = best_cell, best_idx
        report.trajectory.append(current.lam)
    report.grid = g
    report.selected = current.lam
    return report


def grid_walk(
    series,
    grid: SmoothingGrid,
    start_lam,
    partitions,
    config: FitConfig,
    scorer=None,
    extend: bool = False,
    max_steps: int = 50,
    workers: int = 1,
) -> CvReport:
    """Greedy walk over the smoothing grid.

    Scores the current point and all direct neighbors, moves to the best,
    and stops when the current point is the best; every cell is fitted at
    most once (the report counts cache hits).  ``scorer`` can be injected
    for testing; the default fits via :class:`CvScorer`.
    """
    if scorer is None:
        scorer = CvScorer(series, partitions, config, workers)
    report = CvReport(grid=grid)
    start_idx = grid.index_of(np.atleast_1d(start_lam))
    return _walk(report, scorer, grid, start_idx, extend, max_steps)


def select_smoothing(
    series,
    grid: SmoothingGrid,
    partitions,
    config: FitConfig,
    scorer=None,
    extend: bool = False,
    workers: int = 1,
) -> CvReport:
    """Diagonal scan followed by a grid walk.

    First scores the shared-smoothing vectors ``(v, ..., v)`` for every
    candidate ``v``, then walks from the best diagonal point.
    """
    if scorer is None:
        scorer = CvScorer(series, partitions, config, workers)
    report = CvReport(grid=grid)
    shared = sorted(set.intersection(*[set(c) for c in grid.candidates]))
    if not shared:
        raise ValueError("per-state candidate lists share no common value for the diagonal scan")
    best_lam, best_score = None, -np.inf
    for v in shared:
        lam = tuple(v for _ in range(grid.n_states))
        cell = scorer.score(lam, None)
        report.cells[lam] = cell
        report.n_fits += 1
        report.diagonal.append(lam)
        if cell.mean_score > best_score:
            best_lam, best_score = lam, cell.mean_score
    return _walk(report, scorer, grid, grid.index_of(best_lam), extend, 50)


@dataclass(frozen=True)
class StateSelection:
    chosen: int
    mean_scores: dict
    reports: dict


def select_num_states(
    series,
    candidate_states,
    grid_values,
    partitions,
    make_config,
    extend: bool = False,
    workers: int = 1,
) -> StateSelection:
    """Pick the state count whose CV-selected smoothing vector scores best.

    ``make_config(n)`` must return the :class:`FitConfig` for an ``n``-state
    model; the same partitions score every candidate, so the comparison is
    paired.
    """
    candidate_states = list(candidate_states)
    if not candidate_states:
        raise ValueError("no candidate state counts")
    scores, reports = {}, {}
    for n in candidate_states:
        grid = SmoothingGrid.shared(grid_values, n)
        report = select_smoothing(series, grid, partitions, make_config(n), extend=extend, workers=workers)
        scores[n] = report.selected_cell.mean_score
        reports[n] = report
    chosen = max(candidate_states, key=lambda n: scores[n])
    return StateSelection(chosen=chosen, mean_scores=scores, reports=reports)


@dataclass(frozen=True)
class ParametricScanRow:
    n_states: int
    n_params: int
    loglik: float
    aic: float
    bic: float
    jb_statistic: float
    jb_pvalue: float


def parametric_scan(series, candidate_states, restarts: int = 10, seed: int = 0, workers: int = 1):
    """Unpenalized normal-emission HMM fits for a range of state counts, with
    AIC, BIC and a Jarque-Bera test on the one-step-ahead pseudo-residuals.

    A stationary ``n``-state normal HMM has ``n(n-1)`` free transition
    probabilities plus ``2n`` emission parameters.
    """
    from .inference import jarque_bera, pseudo_residuals

    x = np.asarray(series, dtype=float)
    t_obs = int(np.isfinite(x).sum())
    rows = []
    for n in candidate_states:
        config = FitConfig(n_states=n, emissions="normal", restarts=restarts, seed=seed)
        result = fit(x, config)
        p = n * (n - 1) + 2 * n
        aic = -2.0 * result.loglik + 2.0 * p
        bic = -2.0 * result.loglik + p * np.log(t_obs)
        res = pseudo_residuals(result.model, x)
        jb = jarque_bera(res.residuals)
        rows.append(
            ParametricScanRow(
                n_states=n,
                n_params=p,
                loglik=result.loglik,
                aic=aic,
                bic=bic,
                jb_statistic=jb.statistic,
                jb_pvalue=jb.pvalue,
            )
        )
    return rows
