"""Dense latent grids, deterministic Gaussian sampling and elementwise helpers.

A LatentGrid is an immutable C x H x W float64 array. Operations never
broadcast: every binary op requires identical shapes.

Gaussian sampling is portable by construction: raw 64-bit words come from a
Philox-4x64 counter generator keyed by the seed (counter starts at zero), the
top 53 bits of each word are mapped to the open interval (0, 1) as
(k + 0.5) * 2**-53, and consecutive pairs (u1, u2) go through Box-Muller,
emitting sqrt(-2 ln u1) * cos(2 pi u2) followed by sqrt(-2 ln u1) * sin(2 pi u2).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from latent_edit.errors import ShapeMismatchError

log = logging.getLogger(__name__)

_UINT64_MASK = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class Shape:
    """Latent shape (channels, height, width)."""

    channels: int
    height: int
    width: int

    def __post_init__(self):
        for name in ("channels", "height", "width"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ValueError(f"Shape.{name} must be an integer, got {value!r}")
            if value < 1:
                raise ValueError(f"Shape.{name} must be >= 1, got {value}")
        if self.size > np.iinfo(np.intp).max:
            raise ValueError(f"Shape {self.as_tuple()} exceeds the addressable range")

    @classmethod
    def of(cls, value: Union["Shape", Tuple[int, int, int]]) -> "Shape":
        if isinstance(value, Shape):
            return value
        channels, height, width = value
        return cls(int(channels), int(height), int(width))

    @property
    def size(self) -> int:
        return self.channels * self.height * self.width

    @property
    def spatial(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def as_tuple(self) -> Tuple[int, int, int]:
        return (self.channels, self.height, self.width)

    def __str__(self) -> str:
        return "x".join(str(d) for d in self.as_tuple())


@dataclass(frozen=True)
class Seed:
    """64-bit unsigned seed; the same seed always yields the same sample stream."""

    value: int

    def __post_init__(self):
        if isinstance(self.value, bool) or not isinstance(self.value, (int, np.integer)):
            raise ValueError(f"Seed must be an integer, got {self.value!r}")
        if not 0 <= int(self.value) <= _UINT64_MASK:
            raise ValueError(f"Seed must fit in 64 unsigned bits, got {self.value}")

    def derive(self, stream: int) -> "Seed":
        """Independent child seed for ``stream`` (splitmix64 finalizer)."""
        x = (int(self.value) + (int(stream) + 1) * _GOLDEN_GAMMA) & _UINT64_MASK
        x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _UINT64_MASK
        x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _UINT64_MASK
        return Seed(x ^ (x >> 31))


SeedLike = Union[Seed, int]


def as_seed(seed: SeedLike) -> Seed:
    return seed if isinstance(seed, Seed) else Seed(int(seed))


class LatentGrid:
    """Immutable C x H x W grid of finite float64 values."""

    __slots__ = ("_values",)

    def __init__(self, values):
        array = np.array(values, dtype=np.float64, copy=True)
        if array.ndim != 3:
            raise ValueError(f"LatentGrid expects a 3-d array (C, H, W), got ndim={array.ndim}")
        Shape(*array.shape)
        if not np.all(np.isfinite(array)):
            raise ValueError("LatentGrid values must be finite")
        array.flags.writeable = False
        self._values = array

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "LatentGrid":
        # Internal fast path for arrays this module produced itself.
        if not np.all(np.isfinite(array)):
            raise ValueError("LatentGrid arithmetic produced non-finite values")
        grid = object.__new__(cls)
        array.flags.writeable = False
        grid._values = array
        return grid

    @property
    def values(self) -> np.ndarray:
        """Read-only view of the underlying (C, H, W) array."""
        return self._values

    @property
    def shape(self) -> Shape:
        return Shape(*self._values.shape)

    def __add__(self, other: "LatentGrid") -> "LatentGrid":
        _require_same_shape(self, other, "add")
        return LatentGrid._wrap(self._values + other._values)

    def __sub__(self, other: "LatentGrid") -> "LatentGrid":
        _require_same_shape(self, other, "subtract")
        return LatentGrid._wrap(self._values - other._values)

    def scale(self, factor: float) -> "LatentGrid":
        return LatentGrid._wrap(self._values * float(factor))

    def l2_norm(self) -> float:
        return float(np.linalg.norm(self._values.ravel()))

    def equals(self, other: "LatentGrid") -> bool:
        """Bitwise equality of shape and values."""
        return self._values.shape == other._values.shape and np.array_equal(self._values, other._values)

    def __repr__(self) -> str:
        return f"LatentGrid(shape={self.shape}, norm={self.l2_norm():.6g})"


def _require_same_shape(a: LatentGrid, b: LatentGrid, op: str) -> None:
    if a.values.shape != b.values.shape:
        raise ShapeMismatchError(
            f"Cannot {op} grids of shape {a.values.shape} and {b.values.shape}"
        )


def zeros(shape) -> LatentGrid:
    return LatentGrid._wrap(np.zeros(Shape.of(shape).as_tuple(), dtype=np.float64))


def full(shape, value: float) -> LatentGrid:
    return LatentGrid(np.full(Shape.of(shape).as_tuple(), float(value), dtype=np.float64))


def sample_gaussian(shape, seed: SeedLike) -> LatentGrid:
    """Standard-normal grid, a pure function of (shape, seed)."""
    shape = Shape.of(shape)
    seed = as_seed(seed)
    pairs = (shape.size + 1) // 2
    bit_generator = np.random.Philox(key=int(seed.value))
    raw = bit_generator.random_raw(2 * pairs)
    uniform = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    u1 = uniform[0::2]
    u2 = uniform[1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    normals = np.empty(2 * pairs, dtype=np.float64)
    normals[0::2] = radius * np.cos(angle)
    normals[1::2] = radius * np.sin(angle)
    return LatentGrid._wrap(normals[: shape.size].reshape(shape.as_tuple()))


def lerp(a: LatentGrid, b: LatentGrid, w: float) -> LatentGrid:
    """w * a + (1 - w) * b elementwise."""
    _require_same_shape(a, b, "interpolate")
    w = float(w)
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"Interpolation weight must lie in [0, 1], got {w}")
    if w == 1.0:
        return a
    if w == 0.0:
        return b
    # b + w * (a - b) keeps lerp(a, a, w) == a exact.
    return LatentGrid._wrap(b.values + w * (a.values - b.values))


def l2_relative_error(a: LatentGrid, b: LatentGrid) -> float:
    """||a - b||_2 / ||b||_2."""
    _require_same_shape(a, b, "compare")
    denominator = b.l2_norm()
    if denominator == 0.0:
        raise ValueError("Relative error is undefined for an all-zero reference grid")
    return float(np.linalg.norm((a.values - b.values).ravel()) / denominator)
