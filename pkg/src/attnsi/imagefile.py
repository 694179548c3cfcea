"""Headerless text image files: one float per line, row-major pixels."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class ImageParseError(ValueError):
    """Malformed image file; carries the byte offset of the bad token."""

    def __init__(self, path, byte_offset: int, token: str):
        self.byte_offset = byte_offset
        super().__init__(
            f"{path}: invalid pixel value {token!r} at byte offset {byte_offset}"
        )


def read_image(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    values = []
    offset = 0
    for line in raw.splitlines(keepends=True):
        token = line.strip()
        if token:
            try:
                values.append(float(token))
            except ValueError:
                skew = len(line) - len(line.lstrip())
                raise ImageParseError(path, offset + skew, token.decode(errors="replace")) from None
        offset += len(line)
    if not values:
        raise ImageParseError(path, 0, "<empty file>")
    return np.asarray(values, dtype=float)


def write_image(path: str | Path, image: np.ndarray) -> None:
    with open(path, "w") as fh:
        for v in np.asarray(image).ravel():
            fh.write(f"{float(v)!r}\n")
