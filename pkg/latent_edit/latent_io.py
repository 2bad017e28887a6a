"""LatentFile serialization, PGM export and atomic file writes.

LatentFile layout (little-endian):

    offset  size  field
    0       4     magic b"LTED"
    4       2     version (u16, = 1)
    6       1     dtype code (u8, 1 = IEEE-754 binary32)
    7       12    C, H, W (u32 each)
    19      4*CHW payload, row-major (c slowest, w fastest)
"""

from __future__ import annotations

import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Union

import numpy as np

from latent_edit.errors import (
    BadMagicError,
    LatentFileError,
    NonFiniteValueError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
)
from latent_edit.latent import LatentGrid, Shape
from latent_edit.similarity import SimilarityMap

log = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

MAGIC = b"LTED"
VERSION = 1
DTYPE_FLOAT32 = 1
HEADER = struct.Struct("<4sHBIII")
PAYLOAD_DTYPE = np.dtype("<f4")


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def encode_latent(grid: LatentGrid, path: PathLike = None) -> bytes:
    channels, height, width = grid.values.shape
    with np.errstate(over="ignore"):
        payload = grid.values.astype(PAYLOAD_DTYPE)
    if not np.all(np.isfinite(payload)):
        raise NonFiniteValueError("Values overflow 32-bit floats", path)
    return HEADER.pack(MAGIC, VERSION, DTYPE_FLOAT32, channels, height, width) + payload.tobytes(order="C")


def decode_latent(data: bytes, path: PathLike = None) -> LatentGrid:
    if len(data) < HEADER.size:
        raise TruncatedPayloadError(f"File is {len(data)} bytes, shorter than the {HEADER.size}-byte header", path)
    magic, version, dtype, channels, height, width = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"Bad magic {magic!r}, expected {MAGIC!r}", path)
    if version != VERSION:
        raise UnsupportedVersionError(f"Unsupported version {version}, expected {VERSION}", path)
    if dtype != DTYPE_FLOAT32:
        raise UnsupportedDtypeError(f"Unsupported dtype code {dtype}, expected {DTYPE_FLOAT32}", path)
    try:
        shape = Shape(channels, height, width)
    except ValueError as e:
        raise LatentFileError(f"Invalid header shape: {e}", path) from e
    expected = HEADER.size + PAYLOAD_DTYPE.itemsize * shape.size
    if len(data) != expected:
        raise TruncatedPayloadError(
            f"Payload length mismatch: file is {len(data)} bytes, header {shape} needs {expected}", path
        )
    values = np.frombuffer(data, dtype=PAYLOAD_DTYPE, offset=HEADER.size).reshape(shape.as_tuple())
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError("Payload contains NaN or infinite values", path)
    return LatentGrid(values.astype(np.float64))


def write_latent(path: PathLike, grid: LatentGrid) -> Path:
    """Atomically write ``grid`` as a LatentFile (values rounded to 32 bits)."""
    path = atomic_write_bytes(path, encode_latent(grid, path))
    log.debug(f"Wrote latent {grid.shape} to {path}")
    return path


def read_latent(path: PathLike) -> LatentGrid:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise LatentFileError(f"Cannot read latent file: {e.strerror or e}", path) from e
    return decode_latent(data, path)


def _pgm_bytes(pixels: np.ndarray) -> bytes:
    height, width = pixels.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.astype(np.uint8).tobytes()


def to_gray_levels(values: np.ndarray) -> np.ndarray:
    """[0, 1] -> 0..255 with round-half-up."""
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def export_map_pgm(s: SimilarityMap, path: PathLike, raw: bool = False) -> Path:
    """Write a similarity map as binary PGM; raw maps in [-1, 1] are rescaled to [0, 1] first."""
    values = s.values
    if raw:
        values = (values + 1.0) / 2.0
    path = atomic_write_bytes(path, _pgm_bytes(to_gray_levels(values)))
    log.debug(f"Wrote {s.height}x{s.width} map to {path}")
    return path


def export_latent_pgm(grid: LatentGrid, path: PathLike) -> Path:
    """Channels stacked vertically, each min-max normalized on its own (constant channels at 0.5)."""
    planes = []
    for plane in grid.values:
        low, high = plane.min(), plane.max()
        planes.append(np.full(plane.shape, 0.5) if high == low else (plane - low) / (high - low))
    path = atomic_write_bytes(path, _pgm_bytes(to_gray_levels(np.vstack(planes))))
    log.debug(f"Wrote latent {grid.shape} preview to {path}")
    return path


def read_pgm(path: PathLike) -> LatentGrid:
    """Binary PGM with maxval <= 255, as a 1 x H x W grid of gray levels."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise LatentFileError(f"Cannot read PGM file: {e.strerror or e}", path) from e

    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedPayloadError("Incomplete PGM header", path)
        tokens.append(data[start:pos])
    pos += 1
    if pos > len(data):
        raise TruncatedPayloadError("PGM header is not followed by a payload", path)

    if tokens[0] != b"P5":
        raise BadMagicError(f"Bad PGM magic {tokens[0]!r}, expected b'P5'", path)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise LatentFileError(f"Invalid PGM header: {e}", path) from e
    if not 0 < maxval <= 255:
        raise UnsupportedDtypeError(f"Only 8-bit PGM is supported, got maxval {maxval}", path)
    pixels = np.frombuffer(data, dtype=np.uint8, offset=pos)
    if pixels.size != width * height:
        raise TruncatedPayloadError(f"PGM payload has {pixels.size} bytes, expected {width * height}", path)
    return LatentGrid(pixels.reshape(1, height, width).astype(np.float64))
