"""Post-fit inference: parametric bootstrap, confidence intervals and bands
for the state-dependent densities and transition probabilities, and
goodness-of-fit diagnostics via one-step-ahead forecast pseudo-residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import chi2

from ._parallel import parallel_map
from .estimation import FitConfig, FitError, ParamLayout, fit
from .hmm import HmmModel, forward_pass, simulate

_CLAMP = 1e-12


@dataclass(frozen=True)
class BootstrapEnsemble:
    """Refits of series simulated from a fitted model, labels aligned by
    emission mean (the fitting routine sorts states)."""

    generator: HmmModel
    replicates: tuple  # HmmModel or None per replicate
    converged: tuple
    seed: int
    t_len: int

    @property
    def models(self):
        return [m for m, ok in zip(self.replicates, self.converged) if ok]

    @property
    def n_converged(self) -> int:
        return sum(self.converged)

    @property
    def n_failed(self) -> int:
        return len(self.converged) - self.n_converged


def _bootstrap_job(args):
    generator, t_len, config, sim_seed, fit_seed, warm = args
    from dataclasses import replace

    x, _ = simulate(generator, t_len, np.random.default_rng(sim_seed))
    extra = [warm] if warm is not None else []
    try:
        result = fit(x, replace(config, seed=fit_seed), extra_starts=extra)
    except (FitError, ValueError):
        return None
    return result.model


def bootstrap(
    model: HmmModel,
    t_len: int,
    n_replicates: int,
    config: FitConfig,
    seed: int = 0,
    workers: int = 1,
    warm_start: bool = True,
) -> BootstrapEnsemble:
    """Parametric bootstrap: simulate ``n_replicates`` series of length
    ``t_len`` from ``model`` and refit each with the smoothing vector fixed
    in ``config``.

    Per-replicate seeds split deterministically from ``seed``, so results do
    not depend on worker scheduling.  With ``warm_start`` the generating
    model's parameters join each refit's starting points.
    """
    if n_replicates < 1:
        raise ValueError("need at least one bootstrap replicate")
    warm = None
    if warm_start:
        layout = ParamLayout(config.n_states, config.families())
        warm = layout.pack(model)
    jobs = []
    for b in range(n_replicates):
        child = np.random.SeedSequence((seed, b)).generate_state(2)
        jobs.append((model, t_len, config, int(child[0]), int(child[1]), warm))
    models = parallel_map(_bootstrap_job, jobs, workers)
    return BootstrapEnsemble(
        generator=model,
        replicates=tuple(models),
        converged=tuple(m is not None for m in models),
        seed=seed,
        t_len=t_len,
    )


def _require_replicates(ensemble: BootstrapEnsemble, minimum: int = 20):
    if ensemble.n_converged < minimum:
        raise ValueError(
            f"only {ensemble.n_converged} converged replicates; need at least {minimum}"
        )


def tpm_intervals(ensemble: BootstrapEnsemble, level: float = 0.95) -> np.ndarray:
    """Entrywise empirical quantile intervals for the transition matrix;
    returns an (N, N, 2) array of lower/upper endpoints."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    _require_replicates(ensemble)
    gammas = np.stack([m.gamma for m in ensemble.models])
    alpha = (1.0 - level) / 2.0
    lower = np.quantile(gammas, alpha, axis=0)
    upper = np.quantile(gammas, 1.0 - alpha, axis=0)
    return np.stack([lower, upper], axis=-1)


@dataclass(frozen=True)
class DensityBand:
    x: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    band_type: str  # "pointwise" | "simultaneous"
    inflation: float | None = None


def _coverage(curves, lower, upper) -> float:
    inside = np.all((curves >= lower - _CLAMP) & (curves <= upper + _CLAMP), axis=1)
    return float(inside.mean())


def density_band(
    ensemble: BootstrapEnsemble,
    state: int,
    x_grid,
    level: float = 0.95,
    band_type: str = "pointwise",
) -> DensityBand:
    """Confidence band for one state's density over ``x_grid``.

    Pointwise: per-point empirical quantiles of the replicate densities.
    Simultaneous: the pointwise band inflated about its midpoint by the
    smallest factor ``c >= 1`` (bisection to 1e-3) such that at least
    ``level`` of the replicate curves lie entirely inside.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if band_type not in ("pointwise", "simultaneous"):
        raise ValueError("band_type must be 'pointwise' or 'simultaneous'")
    _require_replicates(ensemble)
    x = np.asarray(x_grid, dtype=float)
    curves = np.stack([np.asarray(m.emissions[state].pdf(x)) for m in ensemble.models])
    alpha = (1.0 - level) / 2.0
    lower = np.quantile(curves, alpha, axis=0)
    upper = np.quantile(curves, 1.0 - alpha, axis=0)
    if band_type == "pointwise":
        return DensityBand(x=x, lower=lower, upper=upper, level=level, band_type=band_type)

    mid = 0.5 * (lower + upper)
    half = 0.5 * (upper - lower)

    def covered(c):
        return _coverage(curves, mid - c * half, mid + c * half) >= level

    lo_c = 1.0
    if covered(lo_c):
        c = lo_c
    else:
        hi_c = 2.0
        while not covered(hi_c):
            hi_c *= 2.0
            if hi_c > 1e6:
                raise RuntimeError("simultaneous band inflation did not converge")
        while hi_c - lo_c > 1e-3:
            mid_c = 0.5 * (lo_c + hi_c)
            if covered(mid_c):
                hi_c = mid_c
            else:
                lo_c = mid_c
        c = hi_c
    return DensityBand(
        x=x, lower=mid - c * half, upper=mid + c * half, level=level,
        band_type=band_type, inflation=c,
    )


@dataclass(frozen=True)
class ResidualSeries:
    """One-step-ahead forecast pseudo-residuals.

    ``uniforms`` holds the forecast CDF values F(x_t | x_{1..t-1}), clamped
    away from 0 and 1 before the normal-quantile transform; both arrays cover
    only the observed time points listed in ``time_index``.
    """

    residuals: np.ndarray
    uniforms: np.ndarray
    time_index: np.ndarray


def pseudo_residuals(model: HmmModel, series) -> ResidualSeries:
    x = np.asarray(series, dtype=float)
    observed = np.isfinite(x)
    fp = forward_pass(model, x)
    idx = np.nonzero(observed)[0]
    x_obs = x[idx]
    cdf_vals = np.column_stack([np.asarray(d.cdf(x_obs)) for d in model.emissions])
    u = np.sum(fp.zeta[idx] * cdf_vals, axis=1)
    u = np.clip(u, _CLAMP, 1.0 - _CLAMP)
    return ResidualSeries(residuals=ndtri(u), uniforms=u, time_index=idx)


@dataclass(frozen=True)
class JarqueBeraResult:
    statistic: float
    pvalue: float


def jarque_bera(values) -> JarqueBeraResult:
    """JB = n/6 (skew^2 + excess_kurtosis^2 / 4) against a chi-squared(2)."""
    x = np.asarray(values, dtype=float)
    if x.size < 8:
        raise ValueError("need at least eight values")
    centered = x - x.mean()
    m2 = np.mean(centered**2)
    if m2 <= 0:
        raise ValueError("degenerate input: zero variance")
    skew = np.mean(centered**3) / m2**1.5
    exkurt = np.mean(centered**4) / m2**2 - 3.0
    stat = x.size / 6.0 * (skew**2 + exkurt**2 / 4.0)
    return JarqueBeraResult(statistic=float(stat), pvalue=float(chi2.sf(stat, 2)))
