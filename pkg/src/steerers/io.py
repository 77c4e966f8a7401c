"""Binary containers for steerers and descriptions, plus PGM image I/O.

STEER1: b"STEER1\\0", u32 D, u32 group order (0 for a Lie generator), then
D*D float64 little-endian entries in row-major order.

DESC1: b"DESC1\\0", u32 D, u32 N, then D*N float32 little-endian entries in
column-major order (one description after the other).
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .group_reps import LieGenerator, Steerer

STEER_MAGIC = b"STEER1\0"
DESC_MAGIC = b"DESC1\0"


class FormatError(ValueError):
    """Malformed binary container."""


def steerer_to_bytes(obj: Steerer | LieGenerator) -> bytes:
    order = obj.group_order if isinstance(obj, Steerer) else 0
    m = np.ascontiguousarray(obj.matrix, dtype="<f8")
    return STEER_MAGIC + struct.pack("<II", m.shape[0], order) + m.tobytes(order="C")


def steerer_from_bytes(data: bytes) -> Steerer | LieGenerator:
    head = len(STEER_MAGIC) + 8
    if len(data) < head or not data.startswith(STEER_MAGIC):
        raise FormatError("not a STEER1 container")
    dim, order = struct.unpack_from("<II", data, len(STEER_MAGIC))
    if len(data) != head + 8 * dim * dim:
        raise FormatError(f"STEER1 payload size mismatch for D={dim}")
    m = np.frombuffer(data, dtype="<f8", offset=head).reshape(dim, dim).astype(np.float64)
    return LieGenerator(m) if order == 0 else Steerer(m, order)


def save_steerer(path, obj: Steerer | LieGenerator) -> None:
    Path(path).write_bytes(steerer_to_bytes(obj))


def load_steerer(path) -> Steerer | LieGenerator:
    return steerer_from_bytes(Path(path).read_bytes())


def descriptions_to_bytes(y) -> bytes:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError("descriptions must be a D x N matrix")
    dim, n = y.shape
    return DESC_MAGIC + struct.pack("<II", dim, n) + y.astype("<f4").tobytes(order="F")


def descriptions_from_bytes(data: bytes) -> np.ndarray:
    head = len(DESC_MAGIC) + 8
    if len(data) < head or not data.startswith(DESC_MAGIC):
        raise FormatError("not a DESC1 container")
    dim, n = struct.unpack_from("<II", data, len(DESC_MAGIC))
    if len(data) != head + 4 * dim * n:
        raise FormatError(f"DESC1 payload size mismatch for D={dim}, N={n}")
    flat = np.frombuffer(data, dtype="<f4", offset=head)
    return flat.reshape((dim, n), order="F").astype(np.float64)


def save_descriptions(path, y) -> None:
    Path(path).write_bytes(descriptions_to_bytes(y))


def load_descriptions(path) -> np.ndarray:
    return descriptions_from_bytes(Path(path).read_bytes())


def load_pgm(path) -> np.ndarray:
    """8-bit grayscale PGM as a float image in [0, 1]."""
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode != "L":
            raise FormatError(f"{path}: expected an 8-bit grayscale PGM, got {im.format}/{im.mode}")
        return np.asarray(im, dtype=np.float64) / 255.0


def save_pgm(path, img) -> None:
    img = np.asarray(img, dtype=np.float64)
    levels = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(levels).save(path, format="PPM")
