"""Minimal Vision Transformer forward pass, generic over the scalar type.

The forward pass accepts a plain float image, a batch of images, or a
:class:`~attnsi.dual.Dual` carrying derivatives, and returns every per-layer,
per-head attention matrix together with the classifier logits.  It is written
purely with numpy so the exact same code path serves inference and
forward-mode differentiation.

Architecture (fixed conventions):

* patch embedding of non-overlapping ``patch_size x patch_size`` blocks in
  row-major grid order, pixels row-major within each block;
* learned class token prepended, learned positional embedding added;
* pre-norm encoder blocks: ``x + MHSA(LN(x))`` then ``x + MLP(LN(x))``;
* layer norm with eps 1e-5; MLP hidden width 4x embedding with exact
  (erf-based) GELU; classification head reads the final class token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import dual as nd
from .dual import Dual
from .errors import ConfigError

LN_EPS = 1e-5

# layers / emb_dim / heads
ARCH_TABLE = {
    "small": (4, 32, 2),
    "base": (8, 64, 4),
    "large": (12, 128, 8),
    "huge": (16, 256, 16),
}

Scalars = Union[np.ndarray, Dual]


def default_patch_size(image_side: int) -> int:
    """Default patch size min(2, side/8); raises if that is not an integer."""
    p = min(2.0, image_side / 8.0)
    if p != int(p):
        raise ConfigError(
            f"default patch size {p} for image side {image_side} is not an "
            "integer; pass patch_size explicitly"
        )
    return int(p)


@dataclass(frozen=True)
class ViTConfig:
    """Architecture hyperparameters; all sizes derive from these fields."""

    image_side: int
    patch_size: int
    num_layers: int
    emb_dim: int
    num_heads: int
    num_classes: int = 2

    def __post_init__(self):
        if self.image_side % self.patch_size != 0:
            raise ConfigError(
                f"image side {self.image_side} not divisible by patch size "
                f"{self.patch_size}"
            )
        if self.emb_dim % self.num_heads != 0:
            raise ConfigError(
                f"emb_dim {self.emb_dim} not divisible by num_heads "
                f"{self.num_heads}"
            )

    @classmethod
    def from_arch(
        cls, arch: str, image_side: int, patch_size: int | None = None
    ) -> "ViTConfig":
        if arch not in ARCH_TABLE:
            raise ConfigError(
                f"unknown architecture {arch!r}; valid: {sorted(ARCH_TABLE)}"
            )
        layers, emb, heads = ARCH_TABLE[arch]
        if patch_size is None:
            patch_size = default_patch_size(image_side)
        return cls(image_side, patch_size, layers, emb, heads)

    @property
    def n_pixels(self) -> int:
        return self.image_side * self.image_side

    @property
    def grid_side(self) -> int:
        return self.image_side // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_side * self.grid_side

    @property
    def head_dim(self) -> int:
        return self.emb_dim // self.num_heads

    @property
    def mlp_hidden(self) -> int:
        return 4 * self.emb_dim

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        """Canonical tensor name -> shape for this configuration."""
        e, n1 = self.emb_dim, self.num_patches + 1
        shapes: dict[str, tuple[int, ...]] = {
            "patch_embed.weight": (self.patch_size**2, e),
            "patch_embed.bias": (e,),
            "cls_token": (e,),
            "pos_embed": (n1, e),
        }
        for l in range(self.num_layers):
            p = f"layers.{l}."
            shapes[p + "ln1.gamma"] = (e,)
            shapes[p + "ln1.beta"] = (e,)
            for m in ("q", "k", "v", "out"):
                shapes[p + f"attn.{m}.weight"] = (e, e)
                shapes[p + f"attn.{m}.bias"] = (e,)
            shapes[p + "ln2.gamma"] = (e,)
            shapes[p + "ln2.beta"] = (e,)
            shapes[p + "mlp.fc1.weight"] = (e, self.mlp_hidden)
            shapes[p + "mlp.fc1.bias"] = (self.mlp_hidden,)
            shapes[p + "mlp.fc2.weight"] = (self.mlp_hidden, e)
            shapes[p + "mlp.fc2.bias"] = (e,)
        shapes["final_ln.gamma"] = (e,)
        shapes["final_ln.beta"] = (e,)
        shapes["head.weight"] = (e, self.num_classes)
        shapes["head.bias"] = (self.num_classes,)
        return shapes


class ViTWeights:
    """All learned tensors, keyed by canonical name.

    Tensors are float64 in memory but always hold float32-representable
    values, so a save/load round trip through the float32 interchange format
    is bit exact.
    """

    def __init__(self, tensors: dict[str, np.ndarray]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def validate(self, config: ViTConfig) -> None:
        expected = config.tensor_shapes()
        for name, shape in expected.items():
            if name not in self.tensors:
                raise ConfigError(f"missing tensor {name!r}")
            got = self.tensors[name].shape
            if got != shape:
                raise ConfigError(
                    f"tensor {name!r} has shape {got}, expected {shape}"
                )
            if not np.all(np.isfinite(self.tensors[name])):
                raise ConfigError(f"tensor {name!r} contains non-finite values")
        extra = set(self.tensors) - set(expected)
        if extra:
            raise ConfigError(f"unexpected tensors: {sorted(extra)}")


@dataclass
class AttentionOutput:
    """Per-layer attention weights and classifier logits.

    ``attn[l]`` has shape ``(..., H, N+1, N+1)`` with row-stochastic rows;
    ``logits`` has shape ``(..., num_classes)``.  Leading axes mirror any
    batch axes of the input image.
    """

    attn: list
    logits: Scalars


def random_init(config: ViTConfig, seed: int) -> ViTWeights:
    """Deterministic random weights: N(0, 0.02^2) for all learned tensors,
    except layer-norm scales (1) and shifts (0), drawn in float32."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in config.tensor_shapes().items():
        if name.endswith(".gamma"):
            t = np.ones(shape, dtype=np.float32)
        elif name.endswith(".beta"):
            t = np.zeros(shape, dtype=np.float32)
        else:
            t = rng.normal(0.0, 0.02, size=shape).astype(np.float32)
        tensors[name] = t.astype(np.float64)
    return ViTWeights(tensors)


def zero_init(config: ViTConfig) -> ViTWeights:
    """All-zero weights; every attention matrix becomes exactly uniform."""
    tensors = {
        name: np.zeros(shape) for name, shape in config.tensor_shapes().items()
    }
    return ViTWeights(tensors)


def _layer_norm(x: Scalars, gamma: np.ndarray, beta: np.ndarray) -> Scalars:
    # Dual path computes the value part with exactly the same operation
    # sequence as the plain path (bit-identical values), with the derivative
    # written out once instead of composed from many small Dual ops.
    if isinstance(x, Dual):
        v, d = x.val, x.dot
        mu = v.mean(axis=-1, keepdims=True)
        vc = v - mu
        var = (vc * vc).mean(axis=-1, keepdims=True)
        den = np.sqrt(var + LN_EPS)
        xhat = vc / den
        dc = d - d.mean(axis=-1, keepdims=True)
        dden = (vc * dc).mean(axis=-1, keepdims=True) / den
        dxhat = (dc - xhat * dden) / den
        return Dual(xhat * gamma + beta, dxhat * gamma)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + LN_EPS) * gamma + beta


_GELU_C1 = math.sqrt(2.0 / math.pi)
_GELU_C2 = 0.044715


def _gelu(x: Scalars) -> Scalars:
    """GELU in its tanh form: 0.5 x (1 + tanh(c1 (x + c2 x^3)))."""
    if isinstance(x, Dual):
        v, d = x.val, x.dot
        t = np.tanh(_GELU_C1 * (v + _GELU_C2 * (v * v * v)))
        du = _GELU_C1 * (1.0 + 3.0 * _GELU_C2 * (v * v)) * d
        return Dual(
            0.5 * v * (1.0 + t),
            0.5 * d * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du,
        )
    return 0.5 * x * (1.0 + np.tanh(_GELU_C1 * (x + _GELU_C2 * (x * x * x))))


def _softmax(x: Scalars) -> Scalars:
    """Row softmax over the last axis with max-subtraction; the shift is a
    constant, which changes neither value nor derivative."""
    if isinstance(x, Dual):
        v, d = x.val, x.dot
        e = np.exp(v - np.max(v, axis=-1, keepdims=True))
        p = e / e.sum(axis=-1, keepdims=True)
        return Dual(p, p * (d - (p * d).sum(axis=-1, keepdims=True)))
    e = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _contiguous(x: Scalars) -> Scalars:
    if isinstance(x, Dual):
        return Dual(np.ascontiguousarray(x.val), np.ascontiguousarray(x.dot))
    return np.ascontiguousarray(x)


def _project(x: Scalars, w_mat: np.ndarray, bias: np.ndarray) -> Scalars:
    """x @ w + b with leading axes flattened so batched inputs hit one large
    GEMM instead of a slice loop."""
    if x.ndim > 2:
        lead = x.shape[:-1]
        flat = x.reshape((-1, x.shape[-1])) @ w_mat + bias
        return flat.reshape(lead + (w_mat.shape[-1],))
    return x @ w_mat + bias


def _split_heads(x: Scalars, lead: tuple, t: int, heads: int, dim: int) -> Scalars:
    """(..., T, E) -> contiguous (..., H, T, D); contiguity keeps the batched
    attention matmuls on the fast BLAS path."""
    return _contiguous(x.reshape(lead + (t, heads, dim)).swapaxes(-3, -2))


def patchify(image: Scalars, config: ViTConfig) -> Scalars:
    """(..., n) image vector -> (..., N, patch_size^2) patch matrix."""
    d, p, g = config.image_side, config.patch_size, config.grid_side
    lead = image.shape[:-1]
    x = image.reshape(lead + (g, p, g, p))
    x = x.swapaxes(-3, -2)  # (..., g, g, p, p)
    return x.reshape(lead + (g * g, p * p))


def forward(config: ViTConfig, weights: ViTWeights, image: Scalars) -> AttentionOutput:
    """Run the classifier on an image (or batch), capturing all attention
    matrices.  ``image`` is a length-n vector, a (batch, n) array, or a Dual
    of either shape."""
    n = config.n_pixels
    if image.shape[-1] != n:
        raise ConfigError(
            f"image has {image.shape[-1]} pixels, config expects {n}"
        )
    w = weights.tensors
    H, D = config.num_heads, config.head_dim
    scale = 1.0 / math.sqrt(D)

    x = patchify(image, config)
    x = _project(x, w["patch_embed.weight"], w["patch_embed.bias"])  # (..., N, E)

    lead = x.shape[:-2]
    cls = np.broadcast_to(w["cls_token"], lead + (1, config.emb_dim))
    x = nd.concat([cls, x], axis=-2)
    x = x + w["pos_embed"]

    t = config.num_patches + 1
    attn_all = []
    for l in range(config.num_layers):
        p = f"layers.{l}."
        h = _layer_norm(x, w[p + "ln1.gamma"], w[p + "ln1.beta"])
        q = _project(h, w[p + "attn.q.weight"], w[p + "attn.q.bias"])
        k = _project(h, w[p + "attn.k.weight"], w[p + "attn.k.bias"])
        v = _project(h, w[p + "attn.v.weight"], w[p + "attn.v.bias"])
        q = _split_heads(q, lead, t, H, D)
        k = _split_heads(k, lead, t, H, D)
        v = _split_heads(v, lead, t, H, D)
        scores = (q @ k.swapaxes(-2, -1)) * scale
        a = _softmax(scores)  # (..., H, T, T)
        attn_all.append(a)
        o = (a @ v).swapaxes(-3, -2).reshape(lead + (t, config.emb_dim))
        x = x + _project(o, w[p + "attn.out.weight"], w[p + "attn.out.bias"])

        h2 = _layer_norm(x, w[p + "ln2.gamma"], w[p + "ln2.beta"])
        m = _gelu(_project(h2, w[p + "mlp.fc1.weight"], w[p + "mlp.fc1.bias"]))
        x = x + _project(m, w[p + "mlp.fc2.weight"], w[p + "mlp.fc2.bias"])

    x = _layer_norm(x, w["final_ln.gamma"], w["final_ln.beta"])
    cls_out = x[..., 0, :]
    logits = cls_out @ w["head.weight"] + w["head.bias"]
    return AttentionOutput(attn=attn_all, logits=logits)
