"""Penalized maximum-likelihood estimation.

The objective is the log of the matrix-product likelihood minus a roughness
penalty on each spline emission's weight sequence: for state ``i`` with
weights ``a`` the penalty is ``lam_i / 2 * sum((diff^m a)^2)``.  All
parameters live in one unconstrained working vector (per-row multinomial
logits for the transition matrix with the diagonal as reference category,
softmax logits for spline weights, log scales and a logit mixing weight for
the parametric families); the initial distribution is tied to the stationary
distribution of the transition matrix.

Gradients are analytic: the likelihood part comes from the scaled
forward-backward recursions, the stationary-distribution dependence on the
transition matrix enters through the adjoint of its defining linear system,
and everything is chained through the softmax/exp transforms.  A central
finite-difference cross-check lives in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .basis import SplineBasis
from .densities import NormalDensity, NormalMixtureDensity, SplineDensity, softmax_weights
from .hmm import (
    HmmModel,
    _forward_backward_stats,
    _forward_scaled,
    log_likelihood,
    stationary_distribution,
    viterbi,
)

_BIG = 1e15
_SQRT_2PI = math.sqrt(2.0 * math.pi)


class FitError(RuntimeError):
    """Raised when no restart converges; carries per-restart diagnostics."""

    def __init__(self, message, restarts):
        super().__init__(message)
        self.restarts = restarts


@dataclass(frozen=True)
class PenaltySpec:
    """Difference-penalty order and per-state smoothing weights.

    ``lam`` may be a scalar (shared across states) or a per-state sequence;
    entries for parametric states are ignored.
    """

    lam: float | tuple = 0.0
    order: int = 2

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("penalty order must be at least 1")
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if np.any(lam < 0):
            raise ValueError("smoothing parameters must be nonnegative")
        object.__setattr__(self, "lam", tuple(float(v) for v in lam))

    def resolve(self, n_states: int) -> np.ndarray:
        lam = np.asarray(self.lam, dtype=float)
        if lam.size == 1:
            return np.full(n_states, lam[0])
        if lam.size != n_states:
            raise ValueError(f"expected {n_states} smoothing parameters, got {lam.size}")
        return lam


def roughness_penalty(weights_per_state, spec: PenaltySpec) -> float:
    """Sum over states of ``lam_i/2 * sum((diff^m a_i)^2)``.

    ``weights_per_state`` holds one simplex vector per state, or ``None`` for
    parametric states, which contribute nothing.
    """
    lam = spec.resolve(len(weights_per_state))
    total = 0.0
    for lam_i, w in zip(lam, weights_per_state):
        if w is None:
            continue
        w = np.asarray(w, dtype=float)
        if spec.order >= w.size:
            raise ValueError("penalty order must be below the number of weights")
        d = np.diff(w, n=spec.order)
        total += 0.5 * lam_i * float(d @ d)
    return total


def _difference_gram(size: int, order: int) -> np.ndarray:
    d = np.eye(size)
    d = np.diff(d, n=order, axis=0)
    return d.T @ d


# --- emission family adapters -------------------------------------------------
#
# Each adapter owns the slice of the working vector for one state: it packs
# and unpacks a Density, evaluates densities at the observed points, and
# accumulates the gradient of the log-likelihood (plus penalty, for splines)
# with respect to its parameters.


class _SplineFamily:
    kind = "spline"

    def __init__(self, basis: SplineBasis):
        self.basis = basis
        self.n_params = basis.size - 1

    def unpack(self, vec):
        return SplineDensity.from_free_logits(self.basis, vec)

    def pack(self, dens):
        if not isinstance(dens, SplineDensity):
            raise TypeError("expected a spline density")
        return dens.free_logits

    def values(self, vec, data):
        full = np.insert(vec, self.basis.K, 0.0)
        w = softmax_weights(full)
        f = data.design @ w
        return f, w

    def grad(self, vec, aux, data, post, f, lam, order):
        w = aux
        r = np.zeros_like(f)
        good = f > 0
        r[good] = post[good] / f[good]
        g_w = data.design.T @ r
        penalty = 0.0
        if lam > 0:
            gram = data.penalty_gram(self.basis.size, order)
            gw_pen = lam * (gram @ w)
            d = np.diff(w, n=order)
            penalty = 0.5 * lam * float(d @ d)
            g_w = g_w - gw_pen
        # chain through softmax, then drop the pinned reference entry
        g_full = w * (g_w - float(w @ g_w))
        return np.delete(g_full, self.basis.K), penalty

    def init(self, rng, stats, loc, lam=0.0, order=2):
        centers = self.basis.centers()
        width = stats["sd"] * rng.uniform(0.7, 1.5)
        tilt = -0.5 * ((centers - loc) / width) ** 2
        logits = tilt + rng.normal(scale=0.3, size=self.basis.size)
        # keep the starting roughness penalty O(100): heavily penalized fits
        # then start near the flat zero-penalty configuration instead of a
        # concentrated one the optimizer would crawl away from
        if lam > 0:
            for _ in range(60):
                w = softmax_weights(logits)
                d = np.diff(w, n=order)
                if 0.5 * lam * float(d @ d) <= 100.0:
                    break
                logits = logits * 0.5
        return np.delete(logits - logits[self.basis.K], self.basis.K)


class _NormalFamily:
    kind = "normal"
    n_params = 2

    def unpack(self, vec):
        return NormalDensity(float(vec[0]), math.exp(vec[1]))

    def pack(self, dens):
        if not isinstance(dens, NormalDensity):
            raise TypeError("expected a normal density")
        return np.array([dens.loc, math.log(dens.scale)])

    def values(self, vec, data):
        mu, sigma = vec[0], np.exp(vec[1])  # np.exp: overflow -> inf, not a raise
        if not 0.0 < sigma < np.inf:
            return np.full_like(data.x_obs, np.nan), None
        z = (data.x_obs - mu) / sigma
        f = np.exp(-0.5 * z * z) / (sigma * _SQRT_2PI)
        return f, (z, sigma)

    def grad(self, vec, aux, data, post, f, lam, order):
        z, sigma = aux
        g_mu = float(post @ (z / sigma))
        g_logsigma = float(post @ (z * z - 1.0))
        return np.array([g_mu, g_logsigma]), 0.0

    def init(self, rng, stats, loc):
        mu = loc + 0.1 * stats["sd"] * rng.normal()
        sigma = stats["sd"] * rng.uniform(0.35, 1.0)
        return np.array([mu, math.log(sigma)])


class _MixtureFamily:
    kind = "normal-mixture"
    n_params = 5

    def unpack(self, vec):
        # expit saturates to exactly 0/1 beyond |logit| ~ 37; a fit that
        # drifts to a near-degenerate mixture must still unpack to a valid
        # density, so keep the weight strictly inside the open interval
        w = float(np.clip(expit(vec[4]), 1e-15, 1.0 - 1e-15))
        return NormalMixtureDensity(float(vec[0]), math.exp(vec[1]), float(vec[2]), math.exp(vec[3]), w)

    def pack(self, dens):
        if not isinstance(dens, NormalMixtureDensity):
            raise TypeError("expected a two-component normal mixture")
        return np.array(
            [
                dens.loc1,
                math.log(dens.scale1),
                dens.loc2,
                math.log(dens.scale2),
                math.log(dens.weight / (1.0 - dens.weight)),
            ]
        )

    def values(self, vec, data):
        mu1, s1, mu2, s2 = vec[0], np.exp(vec[1]), vec[2], np.exp(vec[3])
        if not (0.0 < s1 < np.inf and 0.0 < s2 < np.inf):
            return np.full_like(data.x_obs, np.nan), None
        w = expit(vec[4])
        z1 = (data.x_obs - mu1) / s1
        z2 = (data.x_obs - mu2) / s2
        phi1 = np.exp(-0.5 * z1 * z1) / (s1 * _SQRT_2PI)
        phi2 = np.exp(-0.5 * z2 * z2) / (s2 * _SQRT_2PI)
        f = w * phi1 + (1.0 - w) * phi2
        return f, (z1, z2, phi1, phi2, s1, s2, w)

    def grad(self, vec, aux, data, post, f, lam, order):
        z1, z2, phi1, phi2, s1, s2, w = aux
        good = f > 0
        q1 = np.zeros_like(f)
        q2 = np.zeros_like(f)
        q1[good] = w * phi1[good] / f[good]  # within-state component posteriors
        q2[good] = (1.0 - w) * phi2[good] / f[good]
        g = np.array(
            [
                float(post @ (q1 * z1 / s1)),
                float(post @ (q1 * (z1 * z1 - 1.0))),
                float(post @ (q2 * z2 / s2)),
                float(post @ (q2 * (z2 * z2 - 1.0))),
                float(post @ ((1.0 - w) * q1 - w * q2)),
            ]
        )
        return g, 0.0

    def init(self, rng, stats, loc):
        spread = stats["sd"] * rng.uniform(0.5, 1.5)
        mu1 = loc - spread / 2
        mu2 = loc + spread / 2
        s1 = stats["sd"] * rng.uniform(0.3, 0.8)
        s2 = stats["sd"] * rng.uniform(0.3, 0.8)
        return np.array([mu1, math.log(s1), mu2, math.log(s2), rng.normal(scale=0.7)])


_FAMILY_KINDS = {"spline", "normal", "normal-mixture"}


def _make_family(kind: str, basis):
    if kind == "spline":
        if basis is None:
            raise ValueError("spline emissions require a basis")
        return _SplineFamily(basis)
    if kind == "normal":
        return _NormalFamily()
    if kind == "normal-mixture":
        return _MixtureFamily()
    raise ValueError(f"unknown emission family {kind!r} (choose from {sorted(_FAMILY_KINDS)})")


def family_for_density(dens) -> str:
    if isinstance(dens, SplineDensity):
        return "spline"
    if isinstance(dens, NormalDensity):
        return "normal"
    if isinstance(dens, NormalMixtureDensity):
        return "normal-mixture"
    raise TypeError(f"no family for {type(dens).__name__}")


@dataclass(frozen=True)
class FitConfig:
    """Everything :func:`fit` needs besides the data."""

    n_states: int
    emissions: str | tuple = "spline"  # one family name, or one per state
    basis: SplineBasis | None = None
    penalty: PenaltySpec = field(default_factory=PenaltySpec)
    restarts: int = 10
    seed: int = 0
    maxiter: int = 2000
    ftol: float = 1e-8
    gtol: float = 1e-6

    def __post_init__(self):
        if self.n_states < 1:
            raise ValueError("need at least one state")
        if self.restarts < 1:
            raise ValueError("need at least one restart")
        kinds = self.emissions
        if isinstance(kinds, str):
            kinds = (kinds,) * self.n_states
        kinds = tuple(kinds)
        if len(kinds) != self.n_states:
            raise ValueError("need one emission family per state")
        object.__setattr__(self, "emissions", kinds)

    def families(self):
        return [_make_family(kind, self.basis) for kind in self.emissions]


class ParamLayout:
    """Maps between HmmModel values and the unconstrained working vector.

    Layout: ``N*(N-1)`` transition logits (row-major, off-diagonal entries in
    ascending column order, diagonal as reference), then each state's
    emission block.
    """

    def __init__(self, n_states: int, families):
        self.n_states = n_states
        self.families = list(families)
        self.trans_dim = n_states * (n_states - 1)
        offsets = [self.trans_dim]
        for fam in self.families:
            offsets.append(offsets[-1] + fam.n_params)
        self.offsets = offsets
        self.dim = offsets[-1]

    def emission_slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])

    def gamma_from(self, vec: np.ndarray) -> np.ndarray:
        n = self.n_states
        gamma = np.empty((n, n))
        pos = 0
        for i in range(n):
            eta = vec[pos : pos + n - 1]
            pos += n - 1
            m = max(0.0, eta.max()) if eta.size else 0.0
            expd = np.exp(eta - m)
            denom = math.exp(-m) + expd.sum()
            row = np.empty(n)
            row[i] = math.exp(-m) / denom
            row[np.arange(n) != i] = expd / denom
            gamma[i] = row
        return gamma

    def gamma_logits(self, gamma: np.ndarray) -> np.ndarray:
        n = self.n_states
        out = np.empty(self.trans_dim)
        pos = 0
        for i in range(n):
            off = np.concatenate([gamma[i, :i], gamma[i, i + 1 :]])
            out[pos : pos + n - 1] = np.log(off) - math.log(gamma[i, i])
            pos += n - 1
        return out

    def unpack(self, vec: np.ndarray) -> HmmModel:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.dim,):
            raise ValueError(f"expected working vector of length {self.dim}")
        gamma = self.gamma_from(vec)
        emissions = tuple(
            fam.unpack(vec[self.emission_slice(i)]) for i, fam in enumerate(self.families)
        )
        return HmmModel(gamma=gamma, emissions=emissions, delta=None)

    def pack(self, model: HmmModel) -> np.ndarray:
        if model.n_states != self.n_states:
            raise ValueError("state count mismatch")
        vec = np.empty(self.dim)
        vec[: self.trans_dim] = self.gamma_logits(model.gamma)
        for i, fam in enumerate(self.families):
            vec[self.emission_slice(i)] = fam.pack(model.emissions[i])
        return vec


class _SeriesData:
    """Per-series precomputations shared by every objective evaluation."""

    def __init__(self, series, basis):
        x = np.asarray(series, dtype=float)
        self.t_len = x.size
        self.observed = np.isfinite(x)
        self.x_obs = x[self.observed]
        self.design = basis.evaluate(self.x_obs) if basis is not None else None
        self._grams = {}

    def penalty_gram(self, size, order):
        key = (size, order)
        if key not in self._grams:
            self._grams[key] = _difference_gram(size, order)
        return self._grams[key]


class PenalizedObjective:
    """Penalized log-likelihood of a series as a function of the working
    vector, with its analytic gradient."""

    def __init__(self, series, config: FitConfig):
        self.config = config
        self.layout = ParamLayout(config.n_states, config.families())
        self.lam = config.penalty.resolve(config.n_states)
        self.order = config.penalty.order
        if config.basis is not None and self.order >= config.basis.size:
            raise ValueError("penalty order must be below the basis size")
        self.data = _SeriesData(series, config.basis)
        if self.data.x_obs.size == 0:
            raise ValueError("series has no observed values")

    def _emission_values(self, vec):
        t_len = self.data.t_len
        n = self.layout.n_states
        p = np.ones((t_len, n))
        auxes = []
        for i, fam in enumerate(self.layout.families):
            f, aux = fam.values(vec[self.layout.emission_slice(i)], self.data)
            if not np.all(np.isfinite(f)):
                return None, None
            p[self.data.observed, i] = f
            auxes.append((f, aux))
        return p, auxes

    def value(self, vec) -> float:
        """Penalized log-likelihood (maximization sign)."""
        vec = np.asarray(vec, dtype=float)
        gamma = self.layout.gamma_from(vec)
        if not np.all(np.isfinite(gamma)):
            return -np.inf
        p, auxes = self._emission_values(vec)
        if p is None:
            return -np.inf
        try:
            delta = stationary_distribution(gamma)
        except ValueError:
            return -np.inf
        _, logc, _, bad = _forward_scaled(p, gamma, delta)
        if bad >= 0:
            return -np.inf
        penalty = 0.0
        for i, fam in enumerate(self.layout.families):
            if fam.kind == "spline" and self.lam[i] > 0:
                w = softmax_weights(np.insert(vec[self.layout.emission_slice(i)], fam.basis.K, 0.0))
                d = np.diff(w, n=self.order)
                penalty += 0.5 * self.lam[i] * float(d @ d)
        return float(logc.sum()) - penalty

    def value_and_grad(self, vec):
        """Negative penalized log-likelihood and its gradient (minimization
        sign, as consumed by the optimizer)."""
        vec = np.asarray(vec, dtype=float)
        fail = (_BIG, np.zeros(self.layout.dim))
        gamma = self.layout.gamma_from(vec)
        if not np.all(np.isfinite(gamma)):
            return fail
        p, auxes = self._emission_values(vec)
        if p is None:
            return fail
        try:
            delta = stationary_distribution(gamma)
        except ValueError:
            return fail
        loglik, post, counts, g_delta = _forward_backward_stats(p, gamma, delta)
        if not np.isfinite(loglik):
            return fail
        # post holds P(S_t = i | x); counts the expected transition tallies

        grad = np.empty(self.layout.dim)
        n = self.layout.n_states

        penalty = 0.0
        obs = self.data.observed
        for i, fam in enumerate(self.layout.families):
            f, aux = auxes[i]
            g_i, pen_i = fam.grad(
                vec[self.layout.emission_slice(i)], aux, self.data, post[obs, i], f,
                self.lam[i] if fam.kind == "spline" else 0.0, self.order,
            )
            grad[self.layout.emission_slice(i)] = g_i
            penalty += pen_i

        if n > 1:
            with np.errstate(divide="ignore", invalid="ignore"):
                g_gamma = counts / gamma
            # the initial distribution is stationary, so it moves with gamma:
            # differentiate through delta (I - Gamma + U) = 1
            m = np.eye(n) - gamma + np.ones((n, n))
            v = np.linalg.solve(m, g_delta)
            g_gamma = g_gamma + np.outer(delta, v)
            pos = 0
            for i in range(n):
                row_dot = float(gamma[i] @ g_gamma[i])
                full = gamma[i] * (g_gamma[i] - row_dot)
                grad[pos : pos + n - 1] = np.concatenate([full[:i], full[i + 1 :]])
                pos += n - 1

        value = loglik - penalty
        if not np.isfinite(value):
            return fail
        return -value, -grad


@dataclass(frozen=True)
class RestartRecord:
    index: int
    penalized_loglik: float
    n_iter: int
    converged: bool
    message: str


@dataclass(frozen=True)
class FitResult:
    """Best model over all restarts, states sorted by emission mean."""

    model: HmmModel
    penalized_loglik: float
    loglik: float
    lam: np.ndarray
    penalty_order: int
    n_iter: int
    restart_index: int
    converged: bool
    restarts: tuple[RestartRecord, ...]
    degenerate_states: tuple[int, ...]
    params: np.ndarray  # winning working vector, in optimizer (unsorted) order
    state_order: tuple[int, ...]

    def weights_per_state(self):
        return [
            d.weights if isinstance(d, SplineDensity) else None for d in self.model.emissions
        ]


def data_stats(series) -> dict:
    x = np.asarray(series, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < 2:
        raise ValueError("need at least two observed values")
    return {"mean": float(x.mean()), "sd": float(x.std(ddof=1)), "sorted": np.sort(x)}


def initial_points(
    layout: ParamLayout,
    n_points: int,
    rng: np.random.Generator,
    stats: dict,
    penalty: PenaltySpec | None = None,
):
    """Randomized starting vectors: transition logits with implied persistence
    in [0.6, 0.98], emission blocks tilted toward different data regions so
    states start apart."""
    n = layout.n_states
    sorted_x = stats["sorted"]
    lam = penalty.resolve(n) if penalty is not None else np.zeros(n)
    order = penalty.order if penalty is not None else 2
    points = np.empty((n_points, layout.dim))
    for r in range(n_points):
        vec = np.empty(layout.dim)
        pos = 0
        for i in range(n):
            p_stay = rng.uniform(0.6, 0.98)
            off = (1.0 - p_stay) / max(n - 1, 1)
            vec[pos : pos + n - 1] = math.log(off / p_stay) if n > 1 else 0.0
            pos += n - 1
        qs = (np.arange(n) + rng.uniform(0.25, 0.75, size=n)) / n
        locs = np.quantile(sorted_x, np.sort(qs))
        for i, fam in enumerate(layout.families):
            if fam.kind == "spline":
                block = fam.init(rng, stats, locs[i], lam=lam[i], order=order)
            else:
                block = fam.init(rng, stats, locs[i])
            vec[layout.emission_slice(i)] = block
        points[r] = vec
    return points


def fit(series, config: FitConfig, extra_starts=()) -> FitResult:
    """Maximize the penalized log-likelihood from ``config.restarts``
    randomized starting points (plus any ``extra_starts``, e.g. warm starts).

    Returns the best converged restart; raises :class:`FitError` when none
    converges.  Deterministic given ``config.seed``.
    """
    x = np.asarray(series, dtype=float)
    if x.size < config.n_states:
        raise ValueError("series shorter than the number of states")
    objective = PenalizedObjective(x, config)
    rng = np.random.default_rng(config.seed)
    stats = data_stats(x)
    starts = [np.asarray(s, dtype=float) for s in extra_starts]
    starts.extend(
        initial_points(objective.layout, config.restarts, rng, stats, penalty=config.penalty)
    )

    records = []
    solutions = []
    for idx, x0 in enumerate(starts):
        res = minimize(
            objective.value_and_grad,
            x0,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": config.maxiter, "ftol": config.ftol, "gtol": config.gtol},
        )
        records.append(
            RestartRecord(
                index=idx,
                penalized_loglik=-float(res.fun),
                n_iter=int(res.nit),
                converged=bool(res.success) and np.isfinite(res.fun) and -res.fun > -_BIG,
                message=str(res.message),
            )
        )
        solutions.append(res.x)

    eligible = [r for r in records if r.converged]
    if not eligible:
        raise FitError("no restart converged", tuple(records))
    winner = max(eligible, key=lambda r: (r.penalized_loglik, -r.index))
    best_vec = solutions[winner.index]

    raw_model = objective.layout.unpack(best_vec)
    lam = config.penalty.resolve(config.n_states)
    means = np.array([d.mean() for d in raw_model.emissions])
    perm = tuple(int(i) for i in np.argsort(means, kind="stable"))
    model = HmmModel(
        gamma=raw_model.gamma[np.ix_(perm, perm)],
        emissions=tuple(raw_model.emissions[i] for i in perm),
        delta=None,
    )
    lam_sorted = lam[list(perm)]

    loglik = log_likelihood(model, x)
    weights = [
        d.weights if isinstance(d, SplineDensity) else None for d in model.emissions
    ]
    pen = roughness_penalty(weights, PenaltySpec(lam=tuple(lam_sorted), order=config.penalty.order))

    path = viterbi(model, x)
    degenerate = tuple(i for i in range(config.n_states) if not np.any(path == i))

    return FitResult(
        model=model,
        penalized_loglik=loglik - pen,
        loglik=loglik,
        lam=lam_sorted,
        penalty_order=config.penalty.order,
        n_iter=winner.n_iter,
        restart_index=winner.index,
        converged=True,
        restarts=tuple(records),
        degenerate_states=degenerate,
        params=best_vec,
        state_order=perm,
    )
