"""Synthetic-data generation and Monte Carlo studies.

Reproduces, at desk scale, the validation protocol for the selective test:
type-I error on null images, power on signal images, and model-evaluation /
wall-time comparisons across grid-search modes.  Trials are independent;
each image owns an RNG stream derived from (master seed, trial, image index)
so every run is reproducible bit for bit and can be spread over a process
pool.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.stats
import threadpoolctl

from .engine import (
    Covariance,
    GridSearchConfig,
    TestResult,
    permutation_p,
    run_single_test,
    test_statistic,
    TestSetup,
)
from .errors import DegenerateRegionError
from .rollout import make_attention_fn, threshold_region
from .vit import ViTConfig, ViTWeights, random_init

CSV_FIELDS = [
    "seed",
    "n",
    "arch",
    "covariance",
    "tau",
    "z_obs",
    "p_selective",
    "p_naive",
    "p_bonferroni",
    "n_intervals",
    "n_model_evals",
    "wall_time_s",
    "status",
]

DEFAULT_ALPHAS = (0.01, 0.05, 0.10)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Mean structure of one synthetic image: a square signal patch of
    magnitude delta on a zero background."""

    n: int
    delta: float
    signal_region: frozenset[int]
    covariance: Covariance

    def mean_vector(self) -> np.ndarray:
        mu = np.zeros(self.n)
        mu[list(self.signal_region)] = self.delta
        return mu


def gen_null(n: int, covariance: Covariance, seed) -> np.ndarray:
    """Zero-mean Gaussian image with the given covariance."""
    rng = np.random.default_rng(seed)
    return covariance.correlate(rng.standard_normal(n))


def random_signal_region(n: int, rng: np.random.Generator) -> frozenset[int]:
    """Axis-aligned square of side floor(sqrt(n)/4) at a uniformly random
    admissible offset."""
    side = int(math.isqrt(n))
    if side * side != n:
        raise ValueError(f"n = {n} is not a perfect square")
    patch = max(side // 4, 1)
    r0 = int(rng.integers(0, side - patch + 1))
    c0 = int(rng.integers(0, side - patch + 1))
    rows = np.arange(r0, r0 + patch)
    cols = np.arange(c0, c0 + patch)
    idx = (rows[:, None] * side + cols[None, :]).ravel()
    return frozenset(int(i) for i in idx)


def gen_signal(spec: SyntheticSpec, seed) -> np.ndarray:
    """Signal image: spec mean plus covariance-correlated noise."""
    return spec.mean_vector() + gen_null(spec.n, spec.covariance, seed)


# ---------------------------------------------------------------------------
# Worker context (one model per process)
# ---------------------------------------------------------------------------

_CTX: dict = {}


def _worker_init(payload: dict) -> None:
    from . import weights_io

    # Small-matrix forwards run fastest on one BLAS thread; parallelism
    # comes from the process pool.
    threadpoolctl.threadpool_limits(1)

    config = ViTConfig.from_arch(
        payload["arch"], payload["image_side"], payload.get("patch_size")
    )
    if payload.get("weights_path"):
        weights = weights_io.load_weights(payload["weights_path"], config)
    else:
        weights = random_init(config, payload["weights_seed"])
    _CTX.clear()
    _CTX.update(payload)
    _CTX["config"] = config
    _CTX["attention_fn"] = make_attention_fn(config, weights)


def _result_row(seed_label: str, result: TestResult | None, status: str) -> dict:
    row = {
        "seed": seed_label,
        "n": _CTX["config"].n_pixels,
        "arch": _CTX["arch"],
        "covariance": _CTX["covariance"].label(),
        "tau": _CTX["tau"],
        "status": status,
        "z_obs": "",
        "p_selective": "",
        "p_naive": "",
        "p_bonferroni": "",
        "n_intervals": "",
        "n_model_evals": "",
        "wall_time_s": "",
    }
    if result is not None:
        row.update(result.to_dict())
    return row


def _run_test_task(task: tuple) -> dict:
    trial, img, delta = task
    master = _CTX["master_seed"]
    seed = (master, trial, img)
    label = f"{master}.{trial}.{img}"
    rng = np.random.default_rng(seed)
    cov = _CTX["covariance"]
    n = _CTX["config"].n_pixels
    if delta > 0.0:
        spec = SyntheticSpec(
            n=n,
            delta=delta,
            signal_region=random_signal_region(n, rng),
            covariance=cov,
        )
        image = spec.mean_vector() + cov.correlate(rng.standard_normal(n))
    else:
        image = cov.correlate(rng.standard_normal(n))
    try:
        result = run_single_test(
            image, cov, _CTX["attention_fn"], _CTX["tau"], _CTX["grid"]
        )
    except DegenerateRegionError:
        return _result_row(label, None, "skipped")
    row = _result_row(label, result, "ok")
    if _CTX.get("permutation_b"):
        scores = _CTX["attention_fn"](image)
        region = threshold_region(scores, _CTX["tau"])
        setup = TestSetup(image, cov, region)
        perm = permutation_p(
            setup,
            _CTX["attention_fn"],
            n_perm=_CTX["permutation_b"],
            seed=seed,
        )
        row["p_permutation"] = perm.p_value
        row["n_perm_redrawn"] = perm.n_redrawn
    return row


def _run_timing_task(task: tuple) -> list[dict]:
    trial, img, _ = task
    master = _CTX["master_seed"]
    seed = (master, trial, img)
    rng = np.random.default_rng(seed)
    cov = _CTX["covariance"]
    n = _CTX["config"].n_pixels
    image = cov.correlate(rng.standard_normal(n))
    rows = []
    for mode in _CTX["modes"]:
        cfg_args = dict(_CTX["grid_kwargs"], mode=mode)
        cfg = GridSearchConfig(**cfg_args)
        t0 = time.perf_counter()
        try:
            result = run_single_test(image, cov, _CTX["attention_fn"], _CTX["tau"], cfg)
            status = "ok"
        except DegenerateRegionError:
            result, status = None, "skipped"
        wall = time.perf_counter() - t0
        row = _result_row(f"{master}.{trial}.{img}", result, status)
        row["mode"] = mode
        row["wall_time_s"] = wall
        rows.append(row)
    return rows


def _run_pool(payload: dict, tasks: list[tuple], task_fn, workers: int):
    if workers <= 1:
        _worker_init(payload)
        with threadpoolctl.threadpool_limits(1):
            return [task_fn(t) for t in tasks]
    with ProcessPoolExecutor(
        max_workers=workers, initializer=_worker_init, initargs=(payload,)
    ) as pool:
        chunk = max(1, len(tasks) // (workers * 8))
        return list(pool.map(task_fn, tasks, chunksize=chunk))


# ---------------------------------------------------------------------------
# Campaigns
# ---------------------------------------------------------------------------


@dataclass
class TrialBatch:
    """All per-test rows of one campaign plus its configuration
    fingerprint."""

    rows: list[dict]
    config: dict

    def pvalues(self, key: str = "p_selective") -> np.ndarray:
        return np.array(
            [float(r[key]) for r in self.rows if r["status"] == "ok"]
        )

    @property
    def skipped_count(self) -> int:
        return sum(1 for r in self.rows if r["status"] != "ok")


def _payload(
    arch: str,
    n: int,
    covariance: Covariance,
    tau: float,
    master_seed: int,
    grid: GridSearchConfig | None,
    weights_seed: int,
    weights_path: str | None,
    patch_size: int | None,
    **extra,
) -> dict:
    side = int(math.isqrt(n))
    if side * side != n:
        raise ValueError(f"image size n = {n} must be a perfect square")
    payload = {
        "arch": arch,
        "image_side": side,
        "patch_size": patch_size,
        "covariance": covariance,
        "tau": tau,
        "master_seed": master_seed,
        "grid": grid or GridSearchConfig(),
        "weights_seed": weights_seed,
        "weights_path": weights_path,
    }
    payload.update(extra)
    return payload


def _fingerprint(payload: dict, **extra) -> dict:
    fp = {
        "arch": payload["arch"],
        "n": payload["image_side"] ** 2,
        "patch_size": payload["patch_size"],
        "covariance": payload["covariance"].label(),
        "tau": payload["tau"],
        "master_seed": payload["master_seed"],
        "weights_seed": payload["weights_seed"],
        "weights_path": payload["weights_path"],
        "grid_mode": payload["grid"].mode if "grid" in payload else None,
    }
    fp.update(extra)
    return fp


def binomial_interval(k: int, m: int, level: float = 0.95) -> tuple[float, float, float]:
    """Rate with a normal-approximation binomial confidence interval."""
    if m == 0:
        return float("nan"), float("nan"), float("nan")
    rate = k / m
    half = scipy.stats.norm.ppf(0.5 + level / 2.0) * math.sqrt(
        max(rate * (1.0 - rate), 0.0) / m
    )
    return rate, max(rate - half, 0.0), min(rate + half, 1.0)


def rejection_summary(
    rows: Iterable[dict], alphas: Sequence[float] = DEFAULT_ALPHAS
) -> dict:
    """Per-method rejection rates (with CIs) at each significance level."""
    ok = [r for r in rows if r["status"] == "ok"]
    methods = {
        "adaptive": "p_selective",
        "naive": "p_naive",
        "bonferroni": "p_bonferroni",
    }
    if ok and "p_permutation" in ok[0]:
        methods["permutation"] = "p_permutation"
    out: dict = {}
    for method, key in methods.items():
        pvals = np.array([float(r[key]) for r in ok])
        out[method] = {}
        for alpha in alphas:
            k = int(np.sum(pvals <= alpha))
            rate, lo, hi = binomial_interval(k, len(pvals))
            out[method][f"{alpha:g}"] = {
                "rate": rate,
                "ci_lo": lo,
                "ci_hi": hi,
                "rejections": k,
                "tests": len(pvals),
            }
    return out


def run_type1(
    arch: str = "base",
    n: int = 256,
    covariance: Covariance | None = None,
    n_images: int = 100,
    n_trials: int = 10,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    master_seed: int = 0,
    workers: int = 1,
    tau: float = 0.6,
    grid: GridSearchConfig | None = None,
    weights_seed: int = 0,
    weights_path: str | None = None,
    patch_size: int | None = None,
    permutation_b: int = 0,
) -> tuple[TrialBatch, dict]:
    """Null images through the full pipeline; rejection rates per method."""
    covariance = covariance or Covariance.identity()
    payload = _payload(
        arch, n, covariance, tau, master_seed, grid,
        weights_seed, weights_path, patch_size,
        permutation_b=permutation_b,
    )
    tasks = [
        (trial, img, 0.0)
        for trial in range(n_trials)
        for img in range(n_images)
    ]
    rows = _run_pool(payload, tasks, _run_test_task, workers)
    batch = TrialBatch(rows, _fingerprint(payload, kind="type1"))
    summary = {
        "config": batch.config,
        "methods": rejection_summary(rows, alphas),
        "skipped_count": batch.skipped_count,
    }
    return batch, summary


def run_power(
    arch: str = "base",
    n: int = 256,
    covariance: Covariance | None = None,
    deltas: Sequence[float] = (1.0, 2.0, 3.0, 4.0),
    n_images: int = 250,
    alpha: float = 0.05,
    master_seed: int = 0,
    workers: int = 1,
    tau: float = 0.6,
    grid: GridSearchConfig | None = None,
    weights_seed: int = 0,
    weights_path: str | None = None,
    patch_size: int | None = None,
) -> tuple[TrialBatch, dict]:
    """Signal images (square patch of magnitude delta at random location);
    power per delta per method over non-skipped tests."""
    covariance = covariance or Covariance.identity()
    payload = _payload(
        arch, n, covariance, tau, master_seed, grid,
        weights_seed, weights_path, patch_size,
    )
    tasks = [
        (di, img, float(delta))
        for di, delta in enumerate(deltas)
        for img in range(n_images)
    ]
    rows = _run_pool(payload, tasks, _run_test_task, workers)
    for row, task in zip(rows, tasks):
        row["delta"] = task[2]
    batch = TrialBatch(rows, _fingerprint(payload, kind="power", alpha=alpha))
    power: dict = {}
    for delta in deltas:
        sub = [r for r in rows if r.get("delta") == float(delta)]
        power[f"{delta:g}"] = {
            method: stats[f"{alpha:g}"]
            for method, stats in rejection_summary(sub, [alpha]).items()
        }
    summary = {
        "config": batch.config,
        "alpha": alpha,
        "power": power,
        "skipped_count": batch.skipped_count,
    }
    return batch, summary


def run_timing(
    arch: str = "base",
    n: int = 256,
    covariance: Covariance | None = None,
    modes: Sequence[str] = ("adaptive", "fixed", "combination"),
    n_images: int = 50,
    master_seed: int = 0,
    workers: int = 1,
    tau: float = 0.6,
    grid: GridSearchConfig | None = None,
    weights_seed: int = 0,
    weights_path: str | None = None,
    patch_size: int | None = None,
) -> tuple[TrialBatch, dict]:
    """Model-evaluation counts and wall time per grid mode on shared null
    images."""
    covariance = covariance or Covariance.identity()
    base_grid = grid or GridSearchConfig()
    grid_kwargs = {
        k: getattr(base_grid, k)
        for k in (
            "half_width", "eps_min", "eps_max", "near_radius",
            "far_lipschitz_factor", "near_lipschitz", "refine_tol",
            "refine_max_iter", "fixed_eps", "combo_near_eps", "combo_far_eps",
        )
    }
    payload = _payload(
        arch, n, covariance, tau, master_seed, base_grid,
        weights_seed, weights_path, patch_size,
        modes=tuple(modes), grid_kwargs=grid_kwargs,
    )
    tasks = [(0, img, 0.0) for img in range(n_images)]
    nested = _run_pool(payload, tasks, _run_timing_task, workers)
    rows = [row for group in nested for row in group]
    batch = TrialBatch(rows, _fingerprint(payload, kind="timing"))
    summary: dict = {"config": batch.config, "modes": {}}
    for mode in modes:
        sub = [r for r in rows if r["mode"] == mode and r["status"] == "ok"]
        summary["modes"][mode] = {
            "mean_model_evals": float(
                np.mean([r["n_model_evals"] for r in sub])
            ),
            "mean_wall_time_s": float(np.mean([r["wall_time_s"] for r in sub])),
            "tests": len(sub),
        }
    return batch, summary


def uniformity_check(
    pvalues: Sequence[float], alphas: Sequence[float] = DEFAULT_ALPHAS
) -> dict:
    """Empirical CDF at each alpha (with binomial CIs) plus a
    Kolmogorov-Smirnov comparison against the uniform distribution."""
    pvalues = np.asarray(pvalues, dtype=float)
    if pvalues.size < 100:
        raise ValueError("need at least 100 p-values for the uniformity check")
    ks = scipy.stats.kstest(pvalues, "uniform")
    report = {
        "n": int(pvalues.size),
        "ks_stat": float(ks.statistic),
        "ks_pvalue": float(ks.pvalue),
        "alphas": {},
    }
    for alpha in alphas:
        k = int(np.sum(pvalues <= alpha))
        rate, lo, hi = binomial_interval(k, pvalues.size)
        report["alphas"][f"{alpha:g}"] = {"rate": rate, "ci_lo": lo, "ci_hi": hi}
    return report


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


def write_rows_csv(path: str | Path, rows: Sequence[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    fields = list(CSV_FIELDS)
    for key in rows[0]:
        if key not in fields:
            fields.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def write_summary_json(path: str | Path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
