"""Selective inference engine: test statistic, conditional line, truncation
region identification by adaptive grid search, and p-value variants.

The test conditions on the attention region selected from the observed image.
Along the line ``X(z) = a + b z`` of images sharing the nuisance component,
membership in the truncation region is ``f_i(z) < 0`` for all pixels, where
``f_i`` flips the sign of (score - threshold) according to whether pixel ``i``
was selected.  The adaptive walk chooses its step from local values and
derivatives of ``f_i`` (obtained in one forward-mode pass), then boundaries
between grid points of differing membership are sharpened by bisection.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.signal

from .dual import Dual
from .errors import (
    CovarianceError,
    DegenerateRegionError,
    RegionConsistencyError,
)
from .gaussian import (
    RealInterval,
    gauss_tail,
    merge_intervals,
    truncated_two_sided_p,
)
from .rollout import AttentionRegion, threshold_region


# ---------------------------------------------------------------------------
# Covariance models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Covariance:
    """Noise covariance: identity, sigma^2 I, power correlation rho^|i-j|,
    or an explicit SPD matrix."""

    kind: str
    sigma2: float = 1.0
    rho: float = 0.5
    matrix: np.ndarray | None = None

    @classmethod
    def identity(cls) -> "Covariance":
        return cls("identity")

    @classmethod
    def scaled(cls, sigma2: float) -> "Covariance":
        if sigma2 <= 0:
            raise CovarianceError(f"sigma2 must be positive, got {sigma2}")
        return cls("scaled", sigma2=sigma2)

    @classmethod
    def power(cls, rho: float = 0.5) -> "Covariance":
        if not -1.0 < rho < 1.0:
            raise CovarianceError(f"rho must lie in (-1, 1), got {rho}")
        return cls("power", rho=rho)

    @classmethod
    def explicit(cls, matrix: np.ndarray) -> "Covariance":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise CovarianceError("explicit covariance must be square")
        if not np.allclose(matrix, matrix.T):
            raise CovarianceError("explicit covariance must be symmetric")
        return cls("explicit", matrix=matrix)

    def label(self) -> str:
        if self.kind == "scaled":
            return f"scaled:{self.sigma2:g}"
        if self.kind == "power":
            return f"power:{self.rho:g}"
        return self.kind

    def matvec(self, v: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return v
        if self.kind == "scaled":
            return self.sigma2 * v
        if self.kind == "power":
            # Sigma v with Sigma_ij = rho^|i-j| via two first-order recursions.
            rho = self.rho
            left = scipy.signal.lfilter([1.0], [1.0, -rho], v)
            right = scipy.signal.lfilter([1.0], [1.0, -rho], v[::-1])[::-1]
            return left + right - v
        return self.matrix @ v

    def quad(self, v: np.ndarray) -> float:
        return float(v @ self.matvec(v))

    def correlate(self, white: np.ndarray) -> np.ndarray:
        """Transform iid N(0,1) draws into noise with this covariance."""
        if self.kind == "identity":
            return white
        if self.kind == "scaled":
            return math.sqrt(self.sigma2) * white
        if self.kind == "power":
            # Stationary AR(1) with unit marginal variance.
            u = white * math.sqrt(1.0 - self.rho**2)
            u[0] = white[0]
            return scipy.signal.lfilter([1.0], [1.0, -self.rho], u)
        try:
            chol = np.linalg.cholesky(self.matrix)
        except np.linalg.LinAlgError as exc:
            raise CovarianceError(f"covariance is not SPD: {exc}") from exc
        return chol @ white


# ---------------------------------------------------------------------------
# Test setup and the conditional line
# ---------------------------------------------------------------------------


@dataclass
class TestSetup:
    """Observed image, known noise covariance, and the selected region."""

    image_obs: np.ndarray
    covariance: Covariance
    region_obs: AttentionRegion

    @property
    def n(self) -> int:
        return self.image_obs.size


@dataclass(frozen=True)
class InferenceLine:
    """One-dimensional slice ``X(z) = a + b z`` of image space on which the
    nuisance component is held at its observed value."""

    a: np.ndarray
    b: np.ndarray
    z_obs: float

    def image_at(self, z: float) -> np.ndarray:
        return self.a + self.b * z


def eta_vector(region: AttentionRegion, n: int) -> np.ndarray:
    """Contrast vector: mean inside the region minus mean outside."""
    m = region.size
    if m == 0 or m == n:
        raise DegenerateRegionError(
            f"attention region with {m} of {n} pixels admits no contrast"
        )
    eta = np.full(n, -1.0 / (n - m))
    eta[list(region.pixels)] = 1.0 / m
    return eta


def test_statistic(setup: TestSetup) -> float:
    """Standardized region contrast eta'X / sqrt(eta' Sigma eta)."""
    eta = eta_vector(setup.region_obs, setup.n)
    denom = setup.covariance.quad(eta)
    if denom <= 0.0:
        raise CovarianceError(f"eta' Sigma eta = {denom} is not positive")
    return float(eta @ setup.image_obs) / math.sqrt(denom)


def build_line(setup: TestSetup) -> InferenceLine:
    """Decompose the observed image into nuisance part plus the test
    direction scaled by the observed statistic."""
    eta = eta_vector(setup.region_obs, setup.n)
    sigma_eta = setup.covariance.matvec(eta)
    denom = float(eta @ sigma_eta)
    if denom <= 0.0:
        raise CovarianceError(f"eta' Sigma eta = {denom} is not positive")
    root = math.sqrt(denom)
    z_obs = float(eta @ setup.image_obs) / root
    b = sigma_eta / root
    a = setup.image_obs - b * z_obs
    return InferenceLine(a=a, b=b, z_obs=z_obs)


# ---------------------------------------------------------------------------
# f_i evaluation along the line
# ---------------------------------------------------------------------------


class LineFunctions:
    """Provider of f_i values (and derivatives) along the line, counting
    every model evaluation."""

    def __init__(self):
        self.n_evals = 0

    def values_and_derivs(self, z: float) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def values(self, z: float) -> np.ndarray:
        raise NotImplementedError

    def values_batch(self, zs: np.ndarray) -> np.ndarray:
        # Fallback: one evaluation per point.
        return np.stack([self.values(z) for z in zs])

    def membership(self, z: float) -> bool:
        return bool(np.all(self.values(z) < 0.0))

    def membership_batch(self, zs: np.ndarray) -> np.ndarray:
        if len(zs) == 0:
            return np.zeros(0, dtype=bool)
        return np.all(self.values_batch(np.asarray(zs)) < 0.0, axis=-1)


class AttentionLineFunctions(LineFunctions):
    """f_i backed by the attention-map pipeline."""

    def __init__(
        self,
        attention_fn: Callable,
        line: InferenceLine,
        tau: float,
        region_obs: AttentionRegion,
    ):
        super().__init__()
        self.attention_fn = attention_fn
        self.line = line
        self.tau = tau
        n = line.a.size
        # f_i = sign_i * (tau - score_i): +1 inside the observed region,
        # -1 outside, per the region-preservation inequalities.
        self.sign = np.where(region_obs.mask(n), 1.0, -1.0)

    def values_and_derivs(self, z: float) -> tuple[np.ndarray, np.ndarray]:
        self.n_evals += 1
        x = Dual(self.line.image_at(z), self.line.b)
        scores = self.attention_fn(x)
        f = (self.tau - scores.val) * self.sign
        fd = -scores.dot * self.sign
        return f, fd

    def values(self, z: float) -> np.ndarray:
        self.n_evals += 1
        scores = self.attention_fn(self.line.image_at(z))
        return (self.tau - scores) * self.sign

    def values_batch(self, zs: np.ndarray) -> np.ndarray:
        zs = np.asarray(zs, dtype=float)
        self.n_evals += len(zs)
        images = self.line.a[None, :] + self.line.b[None, :] * zs[:, None]
        scores = self.attention_fn(images)
        return (self.tau - scores) * self.sign


class CallableLineFunctions(LineFunctions):
    """f_i given directly as a vectorized callable z -> (values, derivs);
    used to exercise the grid search with analytically known regions."""

    def __init__(self, fn: Callable[[float], tuple[np.ndarray, np.ndarray]]):
        super().__init__()
        self.fn = fn

    def values_and_derivs(self, z: float) -> tuple[np.ndarray, np.ndarray]:
        self.n_evals += 1
        vals, ders = self.fn(z)
        return np.asarray(vals, dtype=float), np.asarray(ders, dtype=float)

    def values(self, z: float) -> np.ndarray:
        self.n_evals += 1
        return np.asarray(self.fn(z)[0], dtype=float)


def f_values(
    line: InferenceLine,
    attention_fn: Callable,
    tau: float,
    region_obs: AttentionRegion,
    z: float,
) -> tuple[np.ndarray, np.ndarray]:
    """One-shot f_i values and derivatives at ``z`` (single forward-mode
    evaluation of the attention map)."""
    fns = AttentionLineFunctions(attention_fn, line, tau, region_obs)
    return fns.values_and_derivs(z)


# ---------------------------------------------------------------------------
# Adaptive grid search
# ---------------------------------------------------------------------------


@dataclass
class GridSearchConfig:
    """Knobs of the truncation-region search.

    ``half_width`` defaults to 10 + |z_obs| when left as None.  ``mode`` is
    one of ``adaptive`` (derivative-guided step), ``fixed`` (constant step
    ``fixed_eps``), or ``combination`` (``combo_near_eps`` within
    ``near_radius`` of z_obs, ``combo_far_eps`` elsewhere).
    """

    half_width: float | None = None
    eps_min: float = 1e-4
    eps_max: float = 0.2
    near_radius: float = 0.1
    far_lipschitz_factor: float = 10.0
    near_lipschitz: float = 1.0
    refine_tol: float = 1e-10
    refine_max_iter: int = 60
    mode: str = "adaptive"
    fixed_eps: float = 1e-3
    combo_near_eps: float = 1e-4
    combo_far_eps: float = 1e-2

    def __post_init__(self):
        if not 0.0 < self.eps_min <= self.eps_max:
            raise ValueError("require 0 < eps_min <= eps_max")
        if self.half_width is not None and self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if self.mode not in ("adaptive", "fixed", "combination"):
            raise ValueError(f"unknown grid mode {self.mode!r}")

    def scan_half_width(self, z_obs: float) -> float:
        if self.half_width is not None:
            return self.half_width
        return 10.0 + abs(z_obs)


@dataclass
class TruncatedRegion:
    """Sorted disjoint intervals of the line on which the selected region
    reproduces itself, plus the guaranteed window around z_obs."""

    intervals: list[RealInterval]
    j_window: RealInterval

    @property
    def n_intervals(self) -> int:
        return len(self.intervals)

    def total_mass(self) -> float:
        return sum(iv.width for iv in self.intervals)

    def contains(self, z: float, tol: float = 0.0) -> bool:
        return any(iv.contains(z, tol) for iv in self.intervals)


def grid_width(
    f_vals: np.ndarray,
    f_ders: np.ndarray | None,
    in_region: bool,
    z: float,
    z_obs: float,
    cfg: GridSearchConfig,
) -> float:
    """Raw adaptive width d(z): the largest step that provably keeps every
    f_i on its current side under the local Lipschitz estimate.

    Far from z_obs the Lipschitz constant is taken as 10|f_i'| and only
    pixels with f_i * f_i' < 0 (moving toward their zero) constrain the
    step; with no such pixel the step is eps_max.  Near z_obs a conservative
    unit Lipschitz constant is used for every pixel, and ``f_ders`` may be
    None since it is never read.
    """
    if abs(z - z_obs) <= cfg.near_radius:
        if in_region:
            cand = f_vals < 0.0
            return float(np.min(np.abs(f_vals[cand])) / cfg.near_lipschitz)
        cand = f_vals >= 0.0
        return float(np.max(np.abs(f_vals[cand])) / cfg.near_lipschitz)

    toward_zero = f_vals * f_ders < 0.0
    if in_region:
        cand = (f_vals < 0.0) & toward_zero
        if not np.any(cand):
            return cfg.eps_max
        ratios = np.abs(f_vals[cand]) / (
            cfg.far_lipschitz_factor * np.abs(f_ders[cand])
        )
        return float(np.min(ratios))
    cand = (f_vals >= 0.0) & toward_zero
    if not np.any(cand):
        return cfg.eps_max
    ratios = np.abs(f_vals[cand]) / (
        cfg.far_lipschitz_factor * np.abs(f_ders[cand])
    )
    return float(np.max(ratios))


def adaptive_step(
    f_vals: np.ndarray,
    f_ders: np.ndarray,
    in_region: bool,
    z: float,
    z_obs: float,
    cfg: GridSearchConfig,
) -> float:
    """Clamped walk step min(eps_max, max(d(z), eps_min))."""
    d = grid_width(f_vals, f_ders, in_region, z, z_obs, cfg)
    return min(cfg.eps_max, max(d, cfg.eps_min))


class WalkRecord(NamedTuple):
    """One accepted grid point of an adaptive walk."""

    z: float
    member: bool
    d_raw: float
    step: float


def _walk_adaptive(
    fns: LineFunctions, z_obs: float, s_half: float, cfg: GridSearchConfig
) -> tuple[list[float], list[bool], list[WalkRecord]]:
    points: list[float] = []
    members: list[bool] = []
    records: list[WalkRecord] = []
    z = -s_half
    while z < s_half:
        if abs(z - z_obs) <= cfg.near_radius:
            # Near z_obs the unit-Lipschitz heuristic never reads f', so a
            # value-only evaluation suffices.
            vals = fns.values(z)
            ders = None
        else:
            vals, ders = fns.values_and_derivs(z)
        member = bool(np.all(vals < 0.0))
        d = grid_width(vals, ders, member, z, z_obs, cfg)
        step = min(cfg.eps_max, max(d, cfg.eps_min))
        points.append(z)
        members.append(member)
        records.append(WalkRecord(z, member, d, step))
        z = z + step
    points.append(z)  # sentinel end of the final cell (not evaluated)
    return points, members, records


def _grid_points_fixed(z_obs: float, s_half: float, cfg: GridSearchConfig) -> np.ndarray:
    if cfg.mode == "fixed":
        eps = cfg.fixed_eps
        count = int(math.ceil(2.0 * s_half / eps))
        pts = -s_half + eps * np.arange(count + 1)
        return pts[pts < s_half]
    # combination mode
    pts = [-s_half]
    z = -s_half
    while True:
        eps = (
            cfg.combo_near_eps
            if abs(z - z_obs) < cfg.near_radius
            else cfg.combo_far_eps
        )
        z = z + eps
        if z >= s_half:
            break
        pts.append(z)
    return np.asarray(pts)


def _walk_predetermined(
    fns: LineFunctions, z_obs: float, s_half: float, cfg: GridSearchConfig,
    batch: int = 256,
) -> tuple[list[float], list[bool]]:
    grid = _grid_points_fixed(z_obs, s_half, cfg)
    members = np.empty(len(grid), dtype=bool)
    for i in range(0, len(grid), batch):
        members[i : i + batch] = fns.membership_batch(grid[i : i + batch])
    eps_last = grid[-1] - grid[-2] if len(grid) > 1 else cfg.fixed_eps
    points = list(grid) + [float(grid[-1]) + float(eps_last)]
    return points, list(members)


def _refine_boundaries(
    fns: LineFunctions,
    brackets: list[tuple[int, float, float, bool]],
    cfg: GridSearchConfig,
) -> dict[int, float]:
    """Bisect every (left-index, lo, hi, lo_member) bracket in lockstep
    batches until widths drop below refine_tol."""
    if not brackets:
        return {}
    idx = [b[0] for b in brackets]
    lo = np.array([b[1] for b in brackets])
    hi = np.array([b[2] for b in brackets])
    lo_member = np.array([b[3] for b in brackets])
    for _ in range(cfg.refine_max_iter):
        active = (hi - lo) > cfg.refine_tol
        if not active.any():
            break
        mid = 0.5 * (lo[active] + hi[active])
        mid_member = fns.membership_batch(mid)
        same = mid_member == lo_member[active]
        lo_new = np.where(same, mid, lo[active])
        hi_new = np.where(same, hi[active], mid)
        lo[active] = lo_new
        hi[active] = hi_new
    mids = 0.5 * (lo + hi)
    return {i: float(m) for i, m in zip(idx, mids)}


def identify_region(
    fns: LineFunctions, z_obs: float, cfg: GridSearchConfig
) -> TruncatedRegion:
    """Scan [-S, S], classify grid points by the all-f_i-negative test,
    sharpen membership flips by bisection, and union the member cells with
    the guaranteed window around z_obs."""
    s_half = cfg.scan_half_width(z_obs)

    vals_obs, ders_obs = fns.values_and_derivs(z_obs)
    if np.any(vals_obs >= 0.0):
        bad = int(np.argmax(vals_obs))
        raise RegionConsistencyError(
            f"f_{bad}(z_obs) = {vals_obs[bad]:.3g} >= 0: the observed "
            "statistic falls outside its own truncation region"
        )
    d_obs = min(
        cfg.eps_max, grid_width(vals_obs, ders_obs, True, z_obs, z_obs, cfg)
    )
    j_window = RealInterval(z_obs - d_obs, z_obs + d_obs)

    if cfg.mode == "adaptive":
        points, members, _ = _walk_adaptive(fns, z_obs, s_half, cfg)
    else:
        points, members = _walk_predetermined(fns, z_obs, s_half, cfg)

    n_eval = len(members)
    brackets = [
        (j, points[j], points[j + 1], members[j])
        for j in range(n_eval - 1)
        if members[j] != members[j + 1]
    ]
    bounds = _refine_boundaries(fns, brackets, cfg)

    intervals: list[RealInterval] = []
    j = 0
    while j < n_eval:
        if not members[j]:
            j += 1
            continue
        start = points[j] if j == 0 or members[j - 1] else bounds[j - 1]
        k = j
        while k + 1 < n_eval and members[k + 1]:
            k += 1
        if k + 1 < n_eval:
            end = bounds[k]
        else:
            end = min(points[k + 1], s_half)
        if end > start:
            intervals.append(RealInterval(start, end))
        j = k + 1

    intervals.append(j_window)
    merged = merge_intervals(intervals)
    return TruncatedRegion(intervals=merged, j_window=j_window)


# ---------------------------------------------------------------------------
# p-values
# ---------------------------------------------------------------------------


def naive_p(z_obs: float) -> float:
    """Unconditional two-sided Gaussian tail (ignores selection)."""
    return 2.0 * gauss_tail(abs(z_obs))


def bonferroni_p(p_naive: float, n: int) -> float:
    """min(1, 2^n * p_naive), computed in log space so huge n cannot
    overflow."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if p_naive <= 0.0:
        return 0.0
    exponent = n + math.log2(p_naive)
    if exponent >= 0.0:
        return 1.0
    return 2.0**exponent


@dataclass
class TestResult:
    """Outcome of one selective test."""

    p_selective: float
    p_naive: float
    p_bonferroni: float
    z_obs: float
    region: TruncatedRegion
    n_model_evals: int
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "z_obs": self.z_obs,
            "p_selective": self.p_selective,
            "p_naive": self.p_naive,
            "p_bonferroni": self.p_bonferroni,
            "n_intervals": self.region.n_intervals,
            "n_model_evals": self.n_model_evals,
            "wall_time_s": self.wall_time_s,
        }


def selective_p(
    setup: TestSetup,
    attention_fn: Callable,
    cfg: GridSearchConfig | None = None,
    n_selection_evals: int = 0,
) -> TestResult:
    """Full conditional test for an already-selected region: build the line,
    identify the truncation region, and evaluate all p-value variants.

    ``n_selection_evals`` counts model evaluations spent selecting the
    region (so callers can fold them into the reported total).
    """
    cfg = cfg or GridSearchConfig()
    t0 = time.perf_counter()
    line = build_line(setup)
    fns = AttentionLineFunctions(
        attention_fn, line, setup.region_obs.threshold, setup.region_obs
    )
    region = identify_region(fns, line.z_obs, cfg)
    p_sel = truncated_two_sided_p(line.z_obs, region.intervals)
    p_nv = naive_p(line.z_obs)
    wall = time.perf_counter() - t0
    return TestResult(
        p_selective=p_sel,
        p_naive=p_nv,
        p_bonferroni=bonferroni_p(p_nv, setup.n),
        z_obs=line.z_obs,
        region=region,
        n_model_evals=fns.n_evals + n_selection_evals,
        wall_time_s=wall,
    )


def run_single_test(
    image: np.ndarray,
    covariance: Covariance,
    attention_fn: Callable,
    tau: float,
    cfg: GridSearchConfig | None = None,
) -> TestResult:
    """Select the attention region of ``image`` and test it.

    Raises :class:`DegenerateRegionError` when the selected region is empty
    or covers the whole image (the hypothesis is undefined; callers report
    the test as skipped).
    """
    scores = attention_fn(np.asarray(image, dtype=float))
    region = threshold_region(scores, tau)
    setup = TestSetup(
        image_obs=np.asarray(image, dtype=float),
        covariance=covariance,
        region_obs=region,
    )
    # eta_vector raises DegenerateRegionError for empty/full regions.
    return selective_p(setup, attention_fn, cfg, n_selection_evals=1)


class PermutationResult(NamedTuple):
    p_value: float
    n_redrawn: int


def permutation_p(
    setup: TestSetup,
    attention_fn: Callable,
    n_perm: int = 1000,
    seed: int = 0,
    batch: int = 256,
) -> PermutationResult:
    """Permutation baseline: each replicate permutes the observed pixels,
    reruns the whole selection pipeline on the permuted image, and compares
    |statistic| against the observed one.

    Replicates whose permuted image yields a degenerate region are redrawn
    (and counted).  Deterministic for a given seed.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be at least 1")
    rng = np.random.default_rng(seed)
    x = setup.image_obs
    n = x.size
    tau = setup.region_obs.threshold
    z_obs = test_statistic(setup)

    stats: list[float] = []
    redrawn = 0
    while len(stats) < n_perm:
        k = min(batch, n_perm - len(stats))
        perms = np.stack([rng.permutation(n) for _ in range(k)])
        images = x[perms]
        scores = attention_fn(images)
        for row_scores, row_image in zip(scores, images):
            if len(stats) == n_perm:
                break
            region = threshold_region(row_scores, tau)
            if region.size == 0 or region.size == n:
                redrawn += 1
                continue
            eta = eta_vector(region, n)
            denom = setup.covariance.quad(eta)
            stats.append(float(eta @ row_image) / math.sqrt(denom))

    exceed = np.abs(np.asarray(stats)) > abs(z_obs)
    return PermutationResult(float(np.mean(exceed)), redrawn)
