"""Binary weight interchange format.

Layout::

    bytes 0..3    magic "VITW"
    bytes 4..7    format version, u32 little-endian (currently 1)
    bytes 8..15   manifest length in bytes, u64 little-endian
    manifest      UTF-8 JSON: ordered list of records
                  {"name", "dtype": "f32", "shape", "byte_offset", "byte_length"}
    data section  raw little-endian IEEE-754 float32 values; each record's
                  byte_offset is relative to the start of the data section

Tensor values are stored float32; in memory they are float64, so the round
trip save -> load is bit exact for any weights produced by this package.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import WeightFormatError
from .vit import ViTConfig, ViTWeights

MAGIC = b"VITW"
FORMAT_VERSION = 1


def save_weights(weights: ViTWeights, path: str | Path) -> None:
    """Write weights in manifest order (insertion order of the tensor dict)."""
    records = []
    chunks = []
    offset = 0
    for name, tensor in weights.tensors.items():
        data = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
        records.append(
            {
                "name": name,
                "dtype": "f32",
                "shape": list(tensor.shape),
                "byte_offset": offset,
                "byte_length": len(data),
            }
        )
        chunks.append(data)
        offset += len(data)
    manifest = json.dumps(records, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for chunk in chunks:
            fh.write(chunk)


def load_weights(path: str | Path, config: ViTConfig | None = None) -> ViTWeights:
    """Read a weight file; optionally validate shapes against ``config``."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise WeightFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 16:
        raise WeightFormatError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise WeightFormatError(
            f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})"
        )
    (manifest_len,) = struct.unpack_from("<Q", raw, 8)
    manifest_end = 16 + manifest_len
    if manifest_end > len(raw):
        raise WeightFormatError(f"{path}: truncated manifest")
    try:
        records = json.loads(raw[16:manifest_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFormatError(f"{path}: unreadable manifest: {exc}") from exc

    data = raw[manifest_end:]
    tensors: dict[str, np.ndarray] = {}
    for rec in records:
        name = rec.get("name", "<unnamed>")
        if rec.get("dtype") != "f32":
            raise WeightFormatError(
                f"{path}: tensor {name!r} has unsupported dtype {rec.get('dtype')!r}"
            )
        start, length = rec["byte_offset"], rec["byte_length"]
        if start + length > len(data):
            raise WeightFormatError(
                f"{path}: data section truncated while reading tensor {name!r}"
            )
        shape = tuple(rec["shape"])
        expected_len = 4 * int(np.prod(shape, dtype=np.int64)) if shape else 4
        if length != expected_len:
            raise WeightFormatError(
                f"{path}: tensor {name!r} byte_length {length} does not match "
                f"shape {shape}"
            )
        arr = np.frombuffer(data, dtype="<f4", count=length // 4, offset=start)
        tensors[name] = arr.astype(np.float64).reshape(shape)

    weights = ViTWeights(tensors)
    if config is not None:
        try:
            weights.validate(config)
        except Exception as exc:
            raise WeightFormatError(f"{path}: {exc}") from exc
    return weights
