"""Hidden Markov machinery: likelihood, decoding, forward variables, and
model-implied summaries.

The likelihood is the matrix product ``delta Q(x_1) Gamma Q(x_2) ... 1`` with
``Q(x) = diag(f_1(x), ..., f_N(x))``, evaluated by a scaled forward recursion
so series of any practical length neither underflow nor overflow.  Missing
observations (NaN) contribute an identity ``Q``, which is what makes the
cross-validation masking in :mod:`splinehmm.selection` work.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .densities import Density

_ROW_SUM_TOL = 1e-12


def _validate_tpm(gamma: np.ndarray):
    if gamma.ndim != 2 or gamma.shape[0] != gamma.shape[1]:
        raise ValueError("transition matrix must be square")
    if np.any(gamma < -1e-15) or np.any(gamma > 1 + 1e-15):
        raise ValueError("transition probabilities must lie in [0, 1]")
    if np.any(np.abs(gamma.sum(axis=1) - 1.0) > _ROW_SUM_TOL):
        raise ValueError("transition matrix rows must sum to one")


def stationary_distribution(gamma: np.ndarray) -> np.ndarray:
    """Solve ``delta Gamma = delta`` with entries summing to one.

    Raises ``ValueError`` for reducible or otherwise degenerate chains where
    the stationary distribution is not unique.
    """
    gamma = np.asarray(gamma, dtype=float)
    _validate_tpm(gamma)
    n = gamma.shape[0]
    # delta (I - Gamma + U) = 1 with U the all-ones matrix
    m = np.eye(n) - gamma + np.ones((n, n))
    try:
        delta = np.linalg.solve(m.T, np.ones(n))
    except np.linalg.LinAlgError as exc:
        raise ValueError("chain has no unique stationary distribution") from exc
    if np.any(delta < -1e-10) or abs(delta.sum() - 1.0) > 1e-8:
        raise ValueError("chain is reducible or numerically degenerate")
    delta = np.clip(delta, 0.0, None)
    return delta / delta.sum()


@dataclass(frozen=True)
class HmmModel:
    """State count, transition matrix, initial distribution and emissions.

    ``delta=None`` ties the initial distribution to the stationary
    distribution of ``gamma`` (the default and the form used for fitting).
    """

    gamma: np.ndarray
    emissions: tuple[Density, ...]
    delta: np.ndarray | None = None

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        _validate_tpm(gamma)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "emissions", tuple(self.emissions))
        if len(self.emissions) != gamma.shape[0]:
            raise ValueError("need one emission density per state")
        if self.delta is None:
            object.__setattr__(self, "delta", stationary_distribution(gamma))
            object.__setattr__(self, "_stationary", True)
        else:
            delta = np.asarray(self.delta, dtype=float)
            if delta.shape != (gamma.shape[0],) or np.any(delta < 0):
                raise ValueError("invalid initial distribution")
            if abs(delta.sum() - 1.0) > _ROW_SUM_TOL:
                raise ValueError("initial distribution must sum to one")
            object.__setattr__(self, "delta", delta)
            object.__setattr__(self, "_stationary", False)

    @property
    def n_states(self) -> int:
        return self.gamma.shape[0]

    @property
    def stationary(self) -> bool:
        return self._stationary


@dataclass(frozen=True)
class ForwardPass:
    """Forward-recursion output: log forward variables, one-step-ahead state
    probabilities ``zeta`` (rows sum to one, ``zeta[0] = delta``), and the
    total log-likelihood."""

    log_alpha: np.ndarray
    zeta: np.ndarray
    loglik: float


def emission_matrix(model: HmmModel, series) -> np.ndarray:
    """Densities ``f_i(x_t)`` as a (T, N) matrix; missing rows are all ones."""
    x = np.asarray(series, dtype=float)
    out = np.empty((x.size, model.n_states))
    missing = ~np.isfinite(x)
    for i, dens in enumerate(model.emissions):
        col = np.asarray(dens.pdf(np.where(missing, 0.0, x)), dtype=float)
        out[:, i] = np.where(missing, 1.0, col)
    return out


@njit(cache=True)
def _forward_scaled(p, gamma, delta):
    t_len, n = p.shape
    alpha = np.empty((t_len, n))
    logc = np.empty(t_len)
    zeta = np.empty((t_len, n))
    for i in range(n):
        zeta[0, i] = delta[i]
    for t in range(t_len):
        c = 0.0
        for j in range(n):
            if t == 0:
                v = delta[j] * p[0, j]
            else:
                pred = 0.0
                for i in range(n):
                    pred += alpha[t - 1, i] * gamma[i, j]
                zeta[t, j] = pred
                v = pred * p[t, j]
            alpha[t, j] = v
            c += v
        if not np.isfinite(c) or c <= 0.0:
            return alpha, logc, zeta, t
        for j in range(n):
            alpha[t, j] /= c
        logc[t] = np.log(c)
    return alpha, logc, zeta, -1


@njit(cache=True)
def _backward_scaled(p, gamma, logc):
    t_len, n = p.shape
    beta = np.empty((t_len, n))
    for i in range(n):
        beta[t_len - 1, i] = 1.0
    for t in range(t_len - 2, -1, -1):
        c = np.exp(logc[t + 1])
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += gamma[i, j] * p[t + 1, j] * beta[t + 1, j]
            beta[t, i] = acc / c
    return beta


@njit(cache=True)
def _forward_backward_stats(p, gamma, delta):
    """One fused pass returning everything the gradient needs: loglik,
    posterior state probabilities, expected transition counts, and the
    gradient of the log-likelihood with respect to delta."""
    t_len, n = p.shape
    alpha, logc, _, bad = _forward_scaled(p, gamma, delta)
    post = np.empty((t_len, n))
    counts = np.zeros((n, n))
    g_delta = np.zeros(n)
    if bad >= 0:
        return -np.inf, post, counts, g_delta
    beta = _backward_scaled(p, gamma, logc)
    for t in range(t_len):
        for i in range(n):
            post[t, i] = alpha[t, i] * beta[t, i]
    for t in range(1, t_len):
        c = np.exp(logc[t])
        for i in range(n):
            a = alpha[t - 1, i]
            for j in range(n):
                counts[i, j] += a * gamma[i, j] * p[t, j] * beta[t, j] / c
    c0 = np.exp(logc[0])
    for i in range(n):
        g_delta[i] = p[0, i] * beta[0, i] / c0
    loglik = 0.0
    for t in range(t_len):
        loglik += logc[t]
    return loglik, post, counts, g_delta


@njit(cache=True)
def _viterbi_core(logp, loggamma, logdelta):
    t_len, n = logp.shape
    score = logdelta + logp[0]
    back = np.zeros((t_len, n), dtype=np.int64)
    for t in range(1, t_len):
        new = np.empty(n)
        for j in range(n):
            best = -np.inf
            arg = 0
            for i in range(n):
                cand = score[i] + loggamma[i, j]
                if cand > best:  # strict: ties go to the lower state index
                    best = cand
                    arg = i
            new[j] = best + logp[t, j]
            back[t, j] = arg
        score = new
    path = np.zeros(t_len, dtype=np.int64)
    best = -np.inf
    for i in range(n):
        if score[i] > best:
            best = score[i]
            path[t_len - 1] = i
    for t in range(t_len - 2, -1, -1):
        path[t] = back[t + 1, path[t + 1]]
    return path, best


def log_likelihood(model: HmmModel, series) -> float:
    """Log of the matrix-product likelihood; ``-inf`` when some observation
    has zero density under every state."""
    p = emission_matrix(model, series)
    if p.shape[0] < 1:
        raise ValueError("series must contain at least one observation")
    _, logc, _, bad = _forward_scaled(p, model.gamma, model.delta)
    if bad >= 0:
        return -np.inf
    return float(logc.sum())


def forward_pass(model: HmmModel, series) -> ForwardPass:
    """Run the scaled forward recursion, returning log forward variables and
    the one-step-ahead predictive state probabilities ``zeta``."""
    p = emission_matrix(model, series)
    alpha, logc, zeta, bad = _forward_scaled(p, model.gamma, model.delta)
    if bad >= 0:
        raise ValueError(f"zero likelihood at time index {bad}")
    with np.errstate(divide="ignore"):
        log_alpha = np.log(alpha) + np.cumsum(logc)[:, None]
    return ForwardPass(log_alpha=log_alpha, zeta=zeta, loglik=float(logc.sum()))


def viterbi(model: HmmModel, series) -> np.ndarray:
    """Jointly most probable state path (0-based indices; ties resolve to the
    lower state index)."""
    path, _ = viterbi_with_score(model, series)
    return path


def viterbi_with_score(model: HmmModel, series) -> tuple[np.ndarray, float]:
    p = emission_matrix(model, series)
    with np.errstate(divide="ignore"):
        logp = np.log(p)
        loggamma = np.log(model.gamma)
        logdelta = np.log(model.delta)
    path, score = _viterbi_core(logp, loggamma, logdelta)
    if not np.isfinite(score):
        raise ValueError("all state paths have zero probability")
    return path, float(score)


def marginal_density(model: HmmModel, x):
    """Stationary-weighted mixture of the state-dependent densities."""
    delta = stationary_distribution(model.gamma)
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x, dtype=float)
    for w, dens in zip(delta, model.emissions):
        out = out + w * np.asarray(dens.pdf(x), dtype=float)
    return out if out.ndim else float(out)


def model_acf(model: HmmModel, max_lag: int) -> np.ndarray:
    """Autocorrelation function implied by a stationary model.

    For lag ``k >= 1``, ``rho(k) = (delta_i m_i (Gamma^k)_{ij} m_j - mu^2) /
    sigma^2`` with ``m_i`` the emission means and ``mu``, ``sigma^2`` the
    stationary marginal moments; ``rho(0) = 1`` by definition.
    """
    if max_lag < 0:
        raise ValueError("max_lag must be nonnegative")
    delta = stationary_distribution(model.gamma)
    means = np.array([d.mean() for d in model.emissions])
    seconds = np.array([d.second_moment() for d in model.emissions])
    mu = delta @ means
    var = delta @ seconds - mu**2
    if var <= 0:
        raise ValueError("marginal variance is zero")
    rho = np.empty(max_lag + 1)
    rho[0] = 1.0
    power = np.eye(model.n_states)
    for k in range(1, max_lag + 1):
        power = power @ model.gamma
        rho[k] = ((delta * means) @ power @ means - mu**2) / var
    return rho


def sample_acf(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelation of a series; pairs with a missing member are
    dropped, and everything is normalized by the overall variance."""
    x = np.asarray(series, dtype=float)
    obs = np.isfinite(x)
    xc = np.where(obs, x - np.nanmean(x), 0.0)
    var = np.sum(xc**2) / obs.sum()
    if var <= 0:
        raise ValueError("series has zero variance")
    rho = np.empty(max_lag + 1)
    rho[0] = 1.0
    for k in range(1, max_lag + 1):
        both = obs[:-k] & obs[k:]
        n_pairs = int(both.sum())
        if n_pairs == 0:
            rho[k] = np.nan
            continue
        rho[k] = np.sum(xc[:-k] * xc[k:]) / (n_pairs * var)
    return rho


def simulate(model: HmmModel, t_len: int, rng: np.random.Generator):
    """Draw a series of length ``t_len``: chain from ``delta``/``gamma``,
    observations from the state emissions.  Returns (observations, states)."""
    if t_len < 1:
        raise ValueError("series length must be positive")
    n = model.n_states
    states = np.empty(t_len, dtype=np.int64)
    states[0] = rng.choice(n, p=model.delta)
    for t in range(1, t_len):
        states[t] = rng.choice(n, p=model.gamma[states[t - 1]])
    x = np.empty(t_len)
    for i, dens in enumerate(model.emissions):
        mask = states == i
        count = int(mask.sum())
        if count:
            x[mask] = dens.sample(rng, size=count)
    return x, states
