"""Synthetic binary classification data.

Negatives are pure N(0, I) noise vectors; positives add a constant delta
(drawn uniformly per image from the configured range) on a square patch of
side floor(sqrt(n)/4) at a uniformly random location.
"""

from __future__ import annotations

import math

import numpy as np
import torch


def square_region(side: int, rng: np.random.Generator) -> np.ndarray:
    patch = max(side // 4, 1)
    r0 = int(rng.integers(0, side - patch + 1))
    c0 = int(rng.integers(0, side - patch + 1))
    rows = np.arange(r0, r0 + patch)
    cols = np.arange(c0, c0 + patch)
    return (rows[:, None] * side + cols[None, :]).ravel()


def make_dataset(
    n_negative: int,
    n_positive: int,
    image_side: int,
    delta_range: tuple[float, float],
    seed: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns (images, labels); images (b, n) float32, labels 0/1 int64."""
    rng = np.random.default_rng(seed)
    n = image_side * image_side
    images = np.zeros((n_negative + n_positive, n), dtype=np.float32)
    labels = np.zeros(n_negative + n_positive, dtype=np.int64)
    for i in range(n_negative):
        images[i] = rng.standard_normal(n)
    lo, hi = delta_range
    for i in range(n_positive):
        delta = float(rng.uniform(lo, hi)) if hi > lo else lo
        mu = np.zeros(n, dtype=np.float32)
        mu[square_region(image_side, rng)] = delta
        images[n_negative + i] = mu + rng.standard_normal(n)
        labels[n_negative + i] = 1
    order = rng.permutation(len(labels))
    return torch.from_numpy(images[order]), torch.from_numpy(labels[order])
