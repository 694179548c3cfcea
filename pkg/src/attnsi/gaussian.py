"""Numerically stable standard-normal tail and truncated-tail probabilities.

All tail masses are computed through the complementary error function, never
as ``1 - cdf``, so deep tails keep full relative accuracy.  Endpoints with
magnitude at or beyond :data:`Z_INF` (40 standard deviations) are treated as
infinite; the mass beyond that point is below anything representable in the
ratios computed here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DegenerateRegionError

# Endpoint magnitude treated as "infinitely far in the tail".
Z_INF = 40.0

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class RealInterval:
    """Closed interval [lo, hi] on the real line."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= x <= self.hi + tol


def gauss_tail(x: float) -> float:
    """P(Z > x) for Z ~ N(0, 1), accurate in both tails."""
    return 0.5 * math.erfc(x / _SQRT2)


def interval_mass(iv: RealInterval) -> float:
    """P(Z in [lo, hi]), evaluated through the tail at the endpoint farther
    from the origin so that the subtraction never cancels catastrophically."""
    lo, hi = iv.lo, iv.hi
    if lo >= 0.0:
        return max(gauss_tail(lo) - gauss_tail(hi), 0.0)
    if hi <= 0.0:
        return max(gauss_tail(-hi) - gauss_tail(-lo), 0.0)
    # Straddles zero: both subtracted tails are at most 1/2, no cancellation.
    return max(1.0 - gauss_tail(-lo) - gauss_tail(hi), 0.0)


def _validate_region(intervals: Sequence[RealInterval]) -> None:
    for a, b in zip(intervals, intervals[1:]):
        if b.lo < a.hi:
            raise ValueError("intervals must be sorted and disjoint")


def region_mass(intervals: Iterable[RealInterval]) -> float:
    return sum(interval_mass(iv) for iv in intervals)


def truncated_two_sided_p(
    z_obs: float,
    region: Sequence[RealInterval],
    membership_tol: float = 1e-7,
) -> float:
    """Two-sided tail probability of a standard Gaussian truncated to
    ``region``, evaluated at ``z_obs``.

    Returns ``P(|Z| > |z_obs| | Z in region)`` as the ratio of the mass of
    the region outside ``[-|z_obs|, |z_obs|]`` to the total region mass.

    ``z_obs`` must lie inside the region (up to ``membership_tol``, which
    absorbs boundary-refinement error).  A region with no representable
    probability mass raises :class:`DegenerateRegionError`.
    """
    region = list(region)
    if not region:
        raise DegenerateRegionError("empty truncation region")
    _validate_region(region)
    if not any(iv.contains(z_obs, membership_tol) for iv in region):
        raise ValueError(f"z_obs={z_obs} lies outside the truncation region")

    t = abs(z_obs)
    outside = 0.0
    total = 0.0
    for iv in region:
        total += interval_mass(iv)
        if iv.lo < -t:
            outside += interval_mass(RealInterval(iv.lo, min(iv.hi, -t)))
        if iv.hi > t:
            outside += interval_mass(RealInterval(max(iv.lo, t), iv.hi))
    if total <= 0.0:
        raise DegenerateRegionError(
            "truncation region carries no representable probability mass"
        )
    return min(max(outside / total, 0.0), 1.0)


def merge_intervals(
    intervals: Iterable[RealInterval], gap_tol: float = 0.0
) -> list[RealInterval]:
    """Sort intervals and merge any that overlap or touch within ``gap_tol``."""
    ordered = sorted(intervals, key=lambda iv: iv.lo)
    merged: list[RealInterval] = []
    for iv in ordered:
        if merged and iv.lo <= merged[-1].hi + gap_tol:
            if iv.hi > merged[-1].hi:
                merged[-1] = RealInterval(merged[-1].lo, iv.hi)
        else:
            merged.append(iv)
    return merged
