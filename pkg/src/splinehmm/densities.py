"""State-dependent emission densities.

Three families share one small interface (pdf, cdf, sample, moments): the
spline mixture built on a :class:`~splinehmm.basis.SplineBasis`, plus the
normal and two-component normal mixture used as parametric benchmarks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .basis import SplineBasis

_SQRT_2PI = np.sqrt(2.0 * np.pi)

# Width, in standard deviations, of the effective support used for
# quadrature grids; mass beyond this is far below any tolerance used here.
_TAIL_SDS = 10.0


def softmax_weights(logits) -> np.ndarray:
    b = np.asarray(logits, dtype=float)
    b = b - b.max()
    w = np.exp(b)
    return w / w.sum()


class Density:
    """Common interface; subclasses are immutable value objects."""

    def pdf(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def sample(self, rng, size=None):
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    def second_moment(self) -> float:
        raise NotImplementedError

    def effective_support(self) -> tuple[float, float]:
        raise NotImplementedError


@dataclass(frozen=True)
class SplineDensity(Density):
    """Convex combination of standardized B-spline basis densities.

    ``logits`` has length ``2K+1``; the center entry (index ``K``) is the
    reference category and is pinned to zero, which the constructor enforces
    by subtracting it (softmax weights are shift invariant).
    """

    basis: SplineBasis
    logits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.logits, dtype=float)
        if b.shape != (self.basis.size,):
            raise ValueError(f"expected {self.basis.size} logits, got {b.shape}")
        object.__setattr__(self, "logits", b - b[self.basis.K])

    @classmethod
    def from_free_logits(cls, basis: SplineBasis, free_logits) -> "SplineDensity":
        """Build from the ``2K`` unconstrained logits (reference entry omitted)."""
        free = np.asarray(free_logits, dtype=float)
        if free.shape != (basis.size - 1,):
            raise ValueError(f"expected {basis.size - 1} free logits")
        return cls(basis, np.insert(free, basis.K, 0.0))

    @classmethod
    def from_weights(cls, basis: SplineBasis, weights) -> "SplineDensity":
        w = np.asarray(weights, dtype=float)
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive")
        return cls(basis, np.log(w / w[basis.K]))

    @property
    def weights(self) -> np.ndarray:
        return softmax_weights(self.logits)

    @property
    def free_logits(self) -> np.ndarray:
        return np.delete(self.logits, self.basis.K)

    def pdf(self, x):
        return self.basis.evaluate(x) @ self.weights

    def cdf(self, x):
        return np.clip(self.basis.cumulative(x) @ self.weights, 0.0, 1.0)

    def sample(self, rng, size=None):
        w = self.weights
        n = 1 if size is None else int(size)
        comps = rng.choice(self.basis.size, size=n, p=w)
        starts = self.basis.grid.lower - 3 * self.basis.h + comps * self.basis.h
        draws = starts + self.basis.h * rng.random((n, 4)).sum(axis=1)
        return float(draws[0]) if size is None else draws

    def mean(self):
        m, _ = self.basis.moments()
        return float(self.weights @ m)

    def second_moment(self):
        _, s = self.basis.moments()
        return float(self.weights @ s)

    def effective_support(self):
        return self.basis.full_support


@dataclass(frozen=True)
class NormalDensity(Density):
    loc: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        return np.exp(-0.5 * z * z) / (self.scale * _SQRT_2PI)

    def cdf(self, x):
        return ndtr((np.asarray(x, dtype=float) - self.loc) / self.scale)

    def sample(self, rng, size=None):
        return rng.normal(self.loc, self.scale, size=size)

    def mean(self):
        return self.loc

    def second_moment(self):
        return self.loc**2 + self.scale**2

    def effective_support(self):
        return self.loc - _TAIL_SDS * self.scale, self.loc + _TAIL_SDS * self.scale


@dataclass(frozen=True)
class NormalMixtureDensity(Density):
    """Two-component normal mixture; ``weight`` is the mass of component one."""

    loc1: float
    scale1: float
    loc2: float
    scale2: float
    weight: float

    def __post_init__(self):
        if not (self.scale1 > 0 and self.scale2 > 0):
            raise ValueError("scales must be positive")
        if not 0.0 < self.weight < 1.0:
            raise ValueError("mixing weight must lie strictly in (0, 1)")

    def _components(self):
        return NormalDensity(self.loc1, self.scale1), NormalDensity(self.loc2, self.scale2)

    def pdf(self, x):
        c1, c2 = self._components()
        return self.weight * c1.pdf(x) + (1.0 - self.weight) * c2.pdf(x)

    def cdf(self, x):
        c1, c2 = self._components()
        return self.weight * c1.cdf(x) + (1.0 - self.weight) * c2.cdf(x)

    def sample(self, rng, size=None):
        n = 1 if size is None else int(size)
        pick1 = rng.random(n) < self.weight
        draws = np.where(
            pick1,
            rng.normal(self.loc1, self.scale1, size=n),
            rng.normal(self.loc2, self.scale2, size=n),
        )
        return float(draws[0]) if size is None else draws

    def mean(self):
        return self.weight * self.loc1 + (1.0 - self.weight) * self.loc2

    def second_moment(self):
        return self.weight * (self.loc1**2 + self.scale1**2) + (1.0 - self.weight) * (
            self.loc2**2 + self.scale2**2
        )

    def effective_support(self):
        los = (self.loc1 - _TAIL_SDS * self.scale1, self.loc2 - _TAIL_SDS * self.scale2)
        his = (self.loc1 + _TAIL_SDS * self.scale1, self.loc2 + _TAIL_SDS * self.scale2)
        return min(los), max(his)


def kld(truth: Density, estimate: Density, n_points: int = 4096) -> float:
    """Kullback-Leibler divergence of ``estimate`` from ``truth``.

    Trapezoid rule on an equally spaced grid spanning the union of the two
    effective supports.  Grid points where the true density is below 1e-12
    are dropped (x log x instability near zero).  The result is +inf when the
    truth puts material mass (more than 1e-6) where the estimate is zero;
    mass below that is far under quadrature resolution and is dropped like
    the near-zero truth points, so a compact-support estimate that covers
    all but a vanishing sliver of the truth still gets a finite divergence.
    """
    lo = min(truth.effective_support()[0], estimate.effective_support()[0])
    hi = max(truth.effective_support()[1], estimate.effective_support()[1])
    x = np.linspace(lo, hi, n_points)
    p = np.asarray(truth.pdf(x), dtype=float)
    q = np.asarray(estimate.pdf(x), dtype=float)
    live = p >= 1e-12
    mismatch = live & (q <= 0.0)
    if np.any(mismatch):
        lost = float(np.trapezoid(np.where(mismatch, p, 0.0), x))
        if lost > 1e-6:
            return np.inf
        live &= ~mismatch
    integrand = np.zeros_like(p)
    integrand[live] = p[live] * np.log(p[live] / q[live])
    return float(np.trapezoid(integrand, x))
