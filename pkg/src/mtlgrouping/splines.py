"""B-spline basis expansion of scalar affinity scores.

A fitted basis is described by a clamped knot vector: the boundary knots
repeat degree+1 times and span exactly the observed score range, while
interior knots sit at empirical quantiles of the training scores so the
basis spends its resolution where the data mass is. Inputs outside the
knot range are clamped to the nearest boundary before evaluation, which
makes extrapolation constant instead of polynomial.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_DEGREE = 1  # degree 1 kept available for hand-checkable hat functions
MAX_DEGREE = 6


@dataclass(frozen=True)
class SplineSpec:
    """Clamped B-spline basis: polynomial degree plus the full knot vector."""

    degree: int
    knots: tuple[float, ...]

    def __post_init__(self):
        d = self.degree
        if not MIN_DEGREE <= d <= MAX_DEGREE:
            raise ValueError(f"degree must be in [{MIN_DEGREE}, {MAX_DEGREE}], got {d}")
        t = np.asarray(self.knots, dtype=float)
        if t.size < 2 * (d + 1):
            raise ValueError("knot vector too short for clamped boundaries")
        if np.any(np.diff(t) < 0):
            raise ValueError("knot vector must be non-decreasing")
        lo, hi = t[0], t[-1]
        if not lo < hi:
            raise ValueError("degenerate knot range")
        if not (np.all(t[: d + 1] == lo) and t[d + 1] > lo):
            raise ValueError(f"left boundary knot must repeat exactly {d + 1} times")
        if not (np.all(t[-(d + 1):] == hi) and t[-(d + 2)] < hi):
            raise ValueError(f"right boundary knot must repeat exactly {d + 1} times")

    @property
    def basis_count(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def interior_knot_count(self) -> int:
        return self.basis_count - self.degree - 1

    @property
    def z_min(self) -> float:
        return self.knots[0]

    @property
    def z_max(self) -> float:
        return self.knots[-1]


def fit_knots(training_scores, degree: int, interior_knot_count: int = 0) -> SplineSpec:
    """Place knots from observed scores: boundaries at min/max, interior at quantiles.

    Interior knots are the 1/(m+1), ..., m/(m+1) quantiles of the scores.
    Knots that collide with each other or with a boundary are merged away, so
    the realized interior count can be smaller than requested.
    """
    scores = np.asarray(training_scores, dtype=float).ravel()
    if scores.size < 2:
        raise ValueError("need at least two training scores")
    if not np.all(np.isfinite(scores)):
        raise ValueError("training scores must be finite")
    if interior_knot_count < 0:
        raise ValueError("interior_knot_count must be >= 0")
    lo, hi = float(scores.min()), float(scores.max())
    if lo == hi:
        raise ValueError("all training scores identical; basis domain is degenerate")
    interior: list[float] = []
    if interior_knot_count > 0:
        qs = np.arange(1, interior_knot_count + 1) / (interior_knot_count + 1)
        for v in np.unique(np.quantile(scores, qs)):
            if lo < v < hi:
                interior.append(float(v))
    knots = [lo] * (degree + 1) + interior + [hi] * (degree + 1)
    return SplineSpec(degree=degree, knots=tuple(knots))


def _find_span(t: np.ndarray, degree: int, m: int, z: float) -> int:
    """Index i with t[i] <= z < t[i+1], snapped to the last span at the right end."""
    if z >= t[m]:
        return m - 1
    if z <= t[degree]:
        return degree
    return int(np.searchsorted(t, z, side="right") - 1)


def basis_expand(z: float, spec: SplineSpec) -> np.ndarray:
    """Evaluate every basis function at z, clamped into the knot range.

    Uses the iterative triangular recurrence over the single non-empty span,
    so at most degree+1 entries of the result are nonzero.
    """
    t = np.asarray(spec.knots, dtype=float)
    d = spec.degree
    m = spec.basis_count
    z = min(max(float(z), spec.z_min), spec.z_max)
    span = _find_span(t, d, m, z)
    vals = np.zeros(d + 1)
    vals[0] = 1.0
    left = np.zeros(d + 1)
    right = np.zeros(d + 1)
    for j in range(1, d + 1):
        left[j] = z - t[span + 1 - j]
        right[j] = t[span + j] - z
        saved = 0.0
        for r in range(j):
            term = vals[r] / (right[r + 1] + left[j - r])
            vals[r] = saved + right[r + 1] * term
            saved = left[j - r] * term
        vals[j] = saved
    out = np.zeros(m)
    out[span - d: span + 1] = vals
    return out


def basis_matrix(zs, spec: SplineSpec) -> np.ndarray:
    """Design matrix with one row of basis values per input score."""
    zs = np.asarray(zs, dtype=float).ravel()
    if zs.size == 0:
        return np.zeros((0, spec.basis_count))
    return np.vstack([basis_expand(z, spec) for z in zs])


def affine_expand(z: float) -> np.ndarray:
    """Two-feature expansion (1, z) for the affine mapping variant."""
    return np.array([1.0, float(z)])


def affine_matrix(zs) -> np.ndarray:
    """Design matrix for the affine mapping: columns (1, z)."""
    zs = np.asarray(zs, dtype=float).ravel()
    return np.column_stack([np.ones_like(zs), zs])
