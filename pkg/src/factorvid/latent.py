"""Latent video tensors and their on-disk format.

A latent video is a (T, C, H, W) array: T frames, C channels, spatial
H x W. Values are kept in float64 in memory so downstream algebra meets
tight reconstruction tolerances; the file format stores float32.

File layout: one UTF-8 JSON header line
``{"shape": [T, C, H, W], "dtype": "f32", "order": "row-major",
"endian": "little"}`` terminated by ``\\n``, followed by the raw
little-endian float32 payload in row-major order.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

HEADER_DTYPE = "f32"
HEADER_ORDER = "row-major"
HEADER_ENDIAN = "little"


class LatentFormatError(ValueError):
    """Raised when a latent file does not match the documented layout."""


class NonFiniteLatentError(ValueError):
    """Raised when a latent video would carry NaN or infinite entries."""


@dataclass(frozen=True)
class LatentVideo:
    """A (T, C, H, W) real-valued video tensor.

    Treated as immutable after construction; do not write through
    ``data``. Every construction validates shape and finiteness.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 4:
            raise ValueError(f"latent video must be 4D (T, C, H, W), got shape {arr.shape}")
        if any(d <= 0 for d in arr.shape):
            raise ValueError(f"latent video dimensions must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteLatentError("latent video contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(self.data.shape)

    @classmethod
    def zeros(cls, frames: int, channels: int, height: int, width: int) -> "LatentVideo":
        return cls(np.zeros((frames, channels, height, width), dtype=np.float64))


def save_latent(video: LatentVideo, path: str | os.PathLike) -> None:
    """Write a latent video in the header-line + float32 blob format."""
    header = {
        "shape": list(video.shape),
        "dtype": HEADER_DTYPE,
        "order": HEADER_ORDER,
        "endian": HEADER_ENDIAN,
    }
    payload = video.data.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def load_latent(path: str | os.PathLike) -> LatentVideo:
    """Read a latent video written by :func:`save_latent`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise LatentFormatError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LatentFormatError(f"{path}: unreadable header: {exc}") from exc
    if header.get("dtype") != HEADER_DTYPE or header.get("endian") != HEADER_ENDIAN:
        raise LatentFormatError(f"{path}: unsupported dtype/endian in header: {header}")
    if header.get("order") != HEADER_ORDER:
        raise LatentFormatError(f"{path}: unsupported element order: {header}")
    shape = header.get("shape")
    if not (isinstance(shape, list) and len(shape) == 4 and all(isinstance(d, int) and d > 0 for d in shape)):
        raise LatentFormatError(f"{path}: bad shape in header: {shape!r}")
    count = shape[0] * shape[1] * shape[2] * shape[3]
    payload = raw[newline + 1:]
    if len(payload) != 4 * count:
        raise LatentFormatError(
            f"{path}: payload holds {len(payload)} bytes, expected {4 * count} for shape {shape}"
        )
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)
    return LatentVideo(arr)
