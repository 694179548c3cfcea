"""Attention aggregation: rollout, upsampling, normalization, thresholding.

The pixel-level attention map is produced by head-averaging each layer's
attention weights, multiplying the per-layer matrices (plus identity, for the
skip connection) from the first layer outward, reading the class-token row
against the patch keys, bilinearly upsampling the patch grid to the image
size, and min-max normalizing to [0, 1].

Every step works on plain arrays or :class:`~attnsi.dual.Dual` values and on
an optional leading batch axis.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dual as nd
from .dual import Dual
from .vit import ViTConfig, ViTWeights, forward


@dataclass(frozen=True)
class AttentionRegion:
    """Pixels whose attention score strictly exceeds the threshold."""

    pixels: frozenset[int]
    threshold: float

    @property
    def size(self) -> int:
        return len(self.pixels)

    def mask(self, n: int) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        m[list(self.pixels)] = True
        return m


def rollout(attn_layers: list):
    """Aggregate per-layer attention into class-token -> patch relevance.

    ``attn_layers`` is a list (one entry per layer, first layer first) of
    ``(..., H, T, T)`` row-stochastic matrices.  Returns ``(..., N)`` scores:
    row 0 (class-token query), columns 1..N of the accumulated product
    ``(A_1 + I)(A_2 + I)...(A_L + I)`` of head-averaged matrices.
    """
    t = attn_layers[0].shape[-1]
    eye = np.eye(t, dtype=nd.value_of(attn_layers[0]).dtype)
    acc = None
    for a in attn_layers:
        layer = a.mean(axis=-3) + eye  # head average + skip connection
        acc = layer if acc is None else acc @ layer
    return acc[..., 0, 1:]


def upsample_bilinear(patch_map, out_side: int):
    """Corner-aligned bilinear interpolation of a (..., s, s) map to
    (..., out_side, out_side).  Endpoints map to endpoints, so the input is
    reproduced exactly when out_side == s."""
    s = patch_map.shape[-1]
    if out_side == s:
        return patch_map
    if s == 1:
        reps = (1,) * (patch_map.ndim - 2) + (out_side, out_side)
        if isinstance(patch_map, Dual):
            return Dual(
                np.tile(patch_map.val, reps), np.tile(patch_map.dot, reps)
            )
        return np.tile(patch_map, reps)

    dtype = nd.value_of(patch_map).dtype
    pos = np.linspace(0.0, s - 1.0, out_side)
    i0 = np.minimum(pos.astype(int), s - 2)
    frac = (pos - i0).astype(dtype)
    r0, c0 = i0[:, None], i0[None, :]
    fr, fc = frac[:, None], frac[None, :]

    g00 = patch_map[..., r0, c0]
    g01 = patch_map[..., r0, c0 + 1]
    g10 = patch_map[..., r0 + 1, c0]
    g11 = patch_map[..., r0 + 1, c0 + 1]
    top = g00 * (1.0 - fc) + g01 * fc
    bot = g10 * (1.0 - fc) + g11 * fc
    return top * (1.0 - fr) + bot * fr


def normalize_minmax(image_map):
    """Min-max normalize a (..., d, d) map and flatten it to (..., n).

    A constant map normalizes to all zeros (so any threshold in (0,1) yields
    an empty region) rather than NaN.  "Constant" is judged with a relative
    tolerance: a spread below 1e-12 of the map's magnitude is accumulated
    rounding noise (e.g. the rollout of exactly uniform attention), and
    normalizing it would amplify that noise to full scale.
    """
    lead = image_map.shape[:-2]
    n = image_map.shape[-1] * image_map.shape[-2]
    flat = image_map.reshape(lead + (n,))
    lo = flat.min(axis=-1, keepdims=True)
    hi = flat.max(axis=-1, keepdims=True)
    rng = hi - lo
    scale = np.maximum(np.abs(nd.value_of(lo)), np.abs(nd.value_of(hi)))
    degenerate = nd.value_of(rng) <= 1e-12 * scale
    if np.any(degenerate):
        safe = rng + degenerate  # avoid 0/0; masked to zero below
        out = (flat - lo) / safe
        keep = ~degenerate
        if isinstance(out, Dual):
            return Dual(out.val * keep, out.dot * keep)
        return out * keep
    return (flat - lo) / rng


def threshold_region(scores, tau: float) -> AttentionRegion:
    """Strictly-above-threshold pixel set for a single (unbatched) score
    vector."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {tau}")
    vals = nd.value_of(scores)
    idx = np.flatnonzero(vals > tau)
    return AttentionRegion(pixels=frozenset(int(i) for i in idx), threshold=tau)


def attention_map(config: ViTConfig, weights: ViTWeights, image):
    """Full pipeline: forward pass -> rollout -> upsample -> normalize.

    Returns (..., n) scores in [0, 1]; Dual in, Dual out.
    """
    out = forward(config, weights, image)
    scores = rollout(out.attn)
    g = config.grid_side
    lead = scores.shape[:-1]
    patch_grid = scores.reshape(lead + (g, g))
    up = upsample_bilinear(patch_grid, config.image_side)
    return normalize_minmax(up)


def make_attention_fn(config: ViTConfig, weights: ViTWeights, dtype=None):
    """Bind config and weights into a reusable image -> scores closure.

    ``dtype`` (e.g. ``np.float32``) casts the weights once and every input
    on the way in; Monte Carlo campaigns use float32 for speed, which simply
    fixes a slightly different (but equally valid) attention map.
    """
    if dtype is not None:
        dtype = np.dtype(dtype)
        weights = ViTWeights(
            {k: v.astype(dtype) for k, v in weights.tensors.items()}
        )

    def cast(image):
        if dtype is None:
            return image
        if isinstance(image, Dual):
            return Dual(image.val.astype(dtype), image.dot.astype(dtype))
        return np.asarray(image).astype(dtype)

    def fn(image):
        return attention_map(config, weights, cast(image))

    return fn


def write_scores_csv(
    path: str | Path,
    scores: np.ndarray,
    region: AttentionRegion | None = None,
) -> None:
    """Dump per-pixel attention scores (and, optionally, the thresholded
    region mask) as CSV."""
    scores = np.asarray(scores)
    mask = region.mask(scores.size) if region is not None else None
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if mask is None:
            writer.writerow(["index", "score"])
            for i, s in enumerate(scores):
                writer.writerow([i, f"{s:.12g}"])
        else:
            writer.writerow(["index", "score", "selected"])
            for i, s in enumerate(scores):
                writer.writerow([i, f"{s:.12g}", int(mask[i])])
