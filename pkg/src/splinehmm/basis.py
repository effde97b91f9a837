"""Standardized cubic B-spline basis densities on an equally spaced knot grid.

Every basis function is a cubic B-spline divided by its integral, so it is a
probability density with compact support spanning four knot intervals.  On a
uniform grid all basis functions are translates of one cardinal shape, which
keeps evaluation, integration and sampling cheap and exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

DEGREE = 3  # the piecewise shapes below are hardwired to cubics

# Polynomial pieces of the cardinal cubic B-spline B(u) on knots 0,1,2,3,4,
# written in the local coordinate v = u - piece_start, v in [0, 1).
# B integrates to one, so B is also the Irwin-Hall(4) density.
_PIECE_COEFFS = np.array(
    [  # constant, v, v^2, v^3   (times 1/6)
        [0.0, 0.0, 0.0, 1.0],
        [1.0, 3.0, 3.0, -3.0],
        [4.0, 0.0, -6.0, 3.0],
        [1.0, -3.0, 3.0, -1.0],
    ]
) / 6.0

# Cumulative integral of B at each piece boundary: B(<0)=0, then 1/24, 1/2, 23/24, 1.
_PIECE_CUMULATIVE = np.array([0.0, 1.0 / 24.0, 0.5, 23.0 / 24.0])


def _cardinal(u):
    """Cardinal cubic B-spline B(u) for u in [0, 4), else under 0."""
    u = np.asarray(u, dtype=float)
    piece = np.clip(np.floor(u).astype(int), 0, 3)
    v = u - piece
    c = _PIECE_COEFFS[piece]
    vals = c[..., 0] + v * (c[..., 1] + v * (c[..., 2] + v * c[..., 3]))
    return np.where((u >= 0.0) & (u < 4.0), vals, 0.0)


def _cardinal_cdf(u):
    """Integral of the cardinal cubic B-spline from 0 to u (piecewise quartic)."""
    u = np.asarray(u, dtype=float)
    uc = np.clip(u, 0.0, 4.0)
    piece = np.clip(np.floor(uc).astype(int), 0, 3)
    v = uc - piece
    c = _PIECE_COEFFS[piece]
    inc = v * (c[..., 0] + v * (c[..., 1] / 2.0 + v * (c[..., 2] / 3.0 + v * c[..., 3] / 4.0)))
    return _PIECE_CUMULATIVE[piece] + inc


@dataclass(frozen=True)
class KnotGrid:
    """Equally spaced knots covering ``[lower, upper]`` plus a three-knot
    extension on each side, enough for full cubic support everywhere inside.

    ``n_intervals`` is the number of knot intervals between ``lower`` and
    ``upper``; the spacing ``h`` follows from it.
    """

    lower: float
    upper: float
    n_intervals: int

    def __post_init__(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise ValueError("knot range must be finite")
        if self.upper <= self.lower:
            raise ValueError("upper knot bound must exceed lower bound")
        if self.n_intervals < 1:
            raise ValueError("need at least one interior knot interval")
        diffs = np.diff(self.knots)
        if np.any(diffs <= 0) or np.any(np.abs(diffs - self.h) > 1e-12 * self.h):
            raise ValueError("knots must be strictly increasing and equally spaced")

    @property
    def h(self) -> float:
        return (self.upper - self.lower) / self.n_intervals

    @cached_property
    def knots(self) -> np.ndarray:
        """Full extended knot vector, ``n_intervals + 7`` knots."""
        return self.lower + (np.arange(self.n_intervals + 7) - DEGREE) * self.h


@dataclass(frozen=True)
class SplineBasis:
    """Family of ``2K+1`` standardized cubic B-spline densities.

    Basis index ``k`` runs from ``-K`` to ``K`` in ascending order of support
    location; internally these map to array positions ``0 .. 2K``.
    """

    grid: KnotGrid
    K: int

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be at least 2 to form a cubic basis")
        if self.grid.n_intervals != 2 * self.K - 2:
            raise ValueError("knot grid does not match K")

    @property
    def size(self) -> int:
        return 2 * self.K + 1

    @property
    def h(self) -> float:
        return self.grid.h

    def support(self, position: int) -> tuple[float, float]:
        """Support interval of the basis density at array ``position``."""
        t0 = self.grid.lower - DEGREE * self.h
        return t0 + position * self.h, t0 + (position + 4) * self.h

    @property
    def full_support(self) -> tuple[float, float]:
        return self.support(0)[0], self.support(self.size - 1)[1]

    def centers(self) -> np.ndarray:
        """Support midpoints, which are also the basis means."""
        t0 = self.grid.lower - DEGREE * self.h
        return t0 + (np.arange(self.size) + 2.0) * self.h

    def evaluate(self, x) -> np.ndarray:
        """Evaluate all basis densities at ``x``.

        Returns an array of shape ``x.shape + (2K+1,)``; at most four entries
        per point are nonzero.  Points outside the joint support give zeros.
        """
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        flat = np.atleast_1d(x).ravel()
        out = np.zeros((flat.size, self.size))
        h = self.h
        t0 = self.grid.lower - DEGREE * h
        pos = (flat - t0) / h
        with np.errstate(invalid="ignore"):
            m = np.floor(pos).astype(int)
        inside = np.isfinite(pos) & (pos >= 0.0) & (pos < self.grid.n_intervals + 6)
        idx = np.nonzero(inside)[0]
        for d in range(4):
            j = m[idx] - d
            ok = (j >= 0) & (j < self.size)
            rows = idx[ok]
            cols = j[ok]
            out[rows, cols] = _cardinal(pos[rows] - cols) / h
        out = out.reshape(x.shape + (self.size,)) if not scalar else out[0]
        return out

    def cumulative(self, x) -> np.ndarray:
        """Per-basis CDF values at ``x`` (shape ``x.shape + (2K+1,)``)."""
        x = np.asarray(x, dtype=float)
        t0 = self.grid.lower - DEGREE * self.h
        starts = t0 + np.arange(self.size) * self.h
        u = (x[..., None] - starts) / self.h
        return _cardinal_cdf(u)

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and second moment of every basis density.

        A standardized uniform cubic B-spline starting at ``t`` is the density
        of ``t + h * IrwinHall(4)``, hence mean ``t + 2h`` and variance
        ``h^2 / 3``.
        """
        mean = self.centers()
        second = mean**2 + self.h**2 / 3.0
        return mean, second

    def sample_component(self, position: int, rng: np.random.Generator, size=None) -> np.ndarray:
        """Draw from the basis density at ``position`` (sum of four uniforms)."""
        start, _ = self.support(position)
        n = 1 if size is None else int(size)
        draws = start + self.h * rng.random((n, 4)).sum(axis=1)
        return float(draws[0]) if size is None else draws


def build_basis(data_min: float, data_max: float, K: int) -> SplineBasis:
    """Basis of ``2K+1`` standardized cubic B-splines whose joint support
    covers ``[data_min, data_max]``, with equally spaced interior knots."""
    if not (np.isfinite(data_min) and np.isfinite(data_max)):
        raise ValueError("data bounds must be finite")
    if data_max <= data_min:
        raise ValueError("data_max must exceed data_min")
    K = int(K)
    if K < 2:
        raise ValueError("K must be at least 2 to form a cubic basis")
    grid = KnotGrid(lower=float(data_min), upper=float(data_max), n_intervals=2 * K - 2)
    return SplineBasis(grid=grid, K=K)


def basis_for_data(values, K: int, margin_sds: float = 0.5) -> SplineBasis:
    """Build a basis for an observed series, extending the knot range by
    ``margin_sds`` sample standard deviations beyond the data range so the
    fitted density has room for tails."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < 2:
        raise ValueError("need at least two finite observations")
    sd = float(np.std(x, ddof=1))
    if sd == 0.0:
        raise ValueError("degenerate data: zero variance")
    return build_basis(float(x.min()) - margin_sds * sd, float(x.max()) + margin_sds * sd, K)
