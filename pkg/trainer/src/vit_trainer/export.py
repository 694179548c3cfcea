"""Export a trained model in the VITW interchange format.

Format: magic "VITW", u32 LE version 1, u64 LE manifest length, UTF-8 JSON
manifest of {name, dtype:"f32", shape, byte_offset, byte_length} records,
then the raw little-endian float32 data section.  Matrices are stored in the
orientation the inference engine consumes (input-dim x output-dim), so every
torch Linear weight is transposed on the way out.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .model import ViTClassifier

MAGIC = b"VITW"
VERSION = 1


class ExportError(ValueError):
    pass


def canonical_tensors(model: ViTClassifier) -> dict[str, np.ndarray]:
    """Map the model's parameters onto the canonical interchange names,
    failing loudly on anything unmapped."""
    state = dict(model.state_dict())

    def take(key: str, transpose: bool = False) -> np.ndarray:
        if key not in state:
            raise ExportError(f"model is missing expected parameter {key!r}")
        t = state.pop(key).detach().cpu()
        if transpose:
            t = t.T
        return np.ascontiguousarray(t.numpy().astype("<f4"))

    out: dict[str, np.ndarray] = {
        "patch_embed.weight": take("patch_embed.weight", transpose=True),
        "patch_embed.bias": take("patch_embed.bias"),
        "cls_token": take("cls_token"),
        "pos_embed": take("pos_embed"),
    }
    for l in range(len(model.blocks)):
        src = f"blocks.{l}."
        dst = f"layers.{l}."
        out[dst + "ln1.gamma"] = take(src + "ln1.weight")
        out[dst + "ln1.beta"] = take(src + "ln1.bias")
        for name in ("q", "k", "v", "out"):
            out[dst + f"attn.{name}.weight"] = take(src + f"{name}.weight", transpose=True)
            out[dst + f"attn.{name}.bias"] = take(src + f"{name}.bias")
        out[dst + "ln2.gamma"] = take(src + "ln2.weight")
        out[dst + "ln2.beta"] = take(src + "ln2.bias")
        out[dst + "mlp.fc1.weight"] = take(src + "fc1.weight", transpose=True)
        out[dst + "mlp.fc1.bias"] = take(src + "fc1.bias")
        out[dst + "mlp.fc2.weight"] = take(src + "fc2.weight", transpose=True)
        out[dst + "mlp.fc2.bias"] = take(src + "fc2.bias")
    out["final_ln.gamma"] = take("final_ln.weight")
    out["final_ln.beta"] = take("final_ln.bias")
    out["head.weight"] = take("head.weight", transpose=True)
    out["head.bias"] = take("head.bias")

    if state:
        raise ExportError(f"unmapped model parameters: {sorted(state)}")
    return out


def export(model: ViTClassifier, path: str | Path) -> None:
    tensors = canonical_tensors(model)
    records = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        data = arr.tobytes()
        records.append(
            {
                "name": name,
                "dtype": "f32",
                "shape": list(arr.shape),
                "byte_offset": offset,
                "byte_length": len(data),
            }
        )
        chunks.append(data)
        offset += len(data)
    manifest = json.dumps(records, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for chunk in chunks:
            fh.write(chunk)
