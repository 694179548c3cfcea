"""Torch ViT classifier mirroring the inference engine's conventions.

Everything that affects numerical parity is pinned: row-major patch order,
pre-norm blocks, LayerNorm eps 1e-5, tanh-form GELU, per-head channel
slicing, learned class token and positional embedding, head on the final
class token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

ARCH_TABLE = {
    "small": (4, 32, 2),
    "base": (8, 64, 4),
    "large": (12, 128, 8),
    "huge": (16, 256, 16),
}


@dataclass(frozen=True)
class ModelSpec:
    image_side: int
    patch_size: int
    num_layers: int
    emb_dim: int
    num_heads: int
    num_classes: int = 2

    @classmethod
    def from_arch(cls, arch: str, image_side: int, patch_size: int) -> "ModelSpec":
        layers, emb, heads = ARCH_TABLE[arch]
        return cls(image_side, patch_size, layers, emb, heads)

    @property
    def grid_side(self) -> int:
        return self.image_side // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_side**2

    @property
    def n_pixels(self) -> int:
        return self.image_side**2


class EncoderBlock(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        e = spec.emb_dim
        self.ln1 = nn.LayerNorm(e, eps=1e-5)
        self.q = nn.Linear(e, e)
        self.k = nn.Linear(e, e)
        self.v = nn.Linear(e, e)
        self.out = nn.Linear(e, e)
        self.ln2 = nn.LayerNorm(e, eps=1e-5)
        self.fc1 = nn.Linear(e, 4 * e)
        self.fc2 = nn.Linear(4 * e, e)
        self.num_heads = spec.num_heads
        self.head_dim = e // spec.num_heads

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        b, t, e = x.shape
        h = self.ln1(x)
        q = self.q(h).reshape(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        k = self.k(h).reshape(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        v = self.v(h).reshape(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        attn = scores.softmax(dim=-1)  # (b, heads, t, t)
        o = (attn @ v).transpose(1, 2).reshape(b, t, e)
        x = x + self.out(o)
        h2 = self.ln2(x)
        x = x + self.fc2(F.gelu(self.fc1(h2), approximate="tanh"))
        return x, attn


class ViTClassifier(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        p2 = spec.patch_size**2
        self.patch_embed = nn.Linear(p2, spec.emb_dim)
        self.cls_token = nn.Parameter(torch.zeros(spec.emb_dim))
        self.pos_embed = nn.Parameter(
            torch.zeros(spec.num_patches + 1, spec.emb_dim)
        )
        self.blocks = nn.ModuleList(
            EncoderBlock(spec) for _ in range(spec.num_layers)
        )
        self.final_ln = nn.LayerNorm(spec.emb_dim, eps=1e-5)
        self.head = nn.Linear(spec.emb_dim, spec.num_classes)
        nn.init.normal_(self.cls_token, std=0.02)
        nn.init.normal_(self.pos_embed, std=0.02)

    def patchify(self, images: torch.Tensor) -> torch.Tensor:
        """(b, n) pixel vectors -> (b, N, patch^2), row-major everywhere."""
        s, p, g = self.spec.image_side, self.spec.patch_size, self.spec.grid_side
        x = images.reshape(-1, g, p, g, p)
        x = x.permute(0, 1, 3, 2, 4)
        return x.reshape(-1, g * g, p * p)

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, list]:
        x = self.patch_embed(self.patchify(images))
        b = x.shape[0]
        cls = self.cls_token.expand(b, 1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos_embed
        attns = []
        for block in self.blocks:
            x, attn = block(x)
            attns.append(attn)
        logits = self.head(self.final_ln(x)[:, 0, :])
        return logits, attns

    @torch.no_grad()
    def attention_scores(self, images: torch.Tensor) -> torch.Tensor:
        """Rollout -> corner-aligned bilinear upsample -> min-max normalize;
        (b, n) scores in [0, 1]."""
        _, attns = self.forward(images)
        t = self.spec.num_patches + 1
        eye = torch.eye(t, dtype=images.dtype)
        acc = None
        for attn in attns:
            layer = attn.mean(dim=1) + eye
            acc = layer if acc is None else acc @ layer
        rel = acc[:, 0, 1:]
        g = self.spec.grid_side
        grid = rel.reshape(-1, 1, g, g)
        up = F.interpolate(
            grid,
            size=(self.spec.image_side, self.spec.image_side),
            mode="bilinear",
            align_corners=True,
        )
        flat = up.reshape(up.shape[0], -1)
        lo = flat.min(dim=-1, keepdim=True).values
        hi = flat.max(dim=-1, keepdim=True).values
        rng = hi - lo
        degenerate = rng <= 1e-12 * torch.maximum(lo.abs(), hi.abs())
        out = (flat - lo) / torch.where(degenerate, torch.ones_like(rng), rng)
        return out * (~degenerate)
