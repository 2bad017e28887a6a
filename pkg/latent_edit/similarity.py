"""Similarity maps between a latent and its reference: cosine, block, mixed, sharpened."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, NamedTuple

import numpy as np
from scipy.special import expit

from latent_edit.errors import ConfigError, ShapeMismatchError
from latent_edit.latent import LatentGrid

log = logging.getLogger(__name__)

COSINE_GUARD = 1e-12
OPEN_INTERVAL_EPS = float(np.finfo(np.float64).eps)

RECOMMENDED_GAMMA = (20.0, 200.0)
RECOMMENDED_LAMBDA = (0.04, 0.12)


class SimilarityMap:
    """Immutable H x W map of finite similarity values."""

    __slots__ = ("_values",)

    def __init__(self, values):
        array = np.array(values, dtype=np.float64, copy=True)
        if array.ndim != 2 or array.size == 0:
            raise ValueError(f"SimilarityMap expects a non-empty 2-d array, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("SimilarityMap values must be finite")
        array.flags.writeable = False
        self._values = array

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "SimilarityMap":
        smap = object.__new__(cls)
        array.flags.writeable = False
        smap._values = array
        return smap

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def height(self) -> int:
        return self._values.shape[0]

    @property
    def width(self) -> int:
        return self._values.shape[1]

    @property
    def spatial(self):
        return self._values.shape

    def mean(self) -> float:
        return float(self._values.mean())

    def min(self) -> float:
        return float(self._values.min())

    def max(self) -> float:
        return float(self._values.max())

    def var(self) -> float:
        return float(self._values.var())

    def as_latent(self) -> LatentGrid:
        """The map as a 1 x H x W grid, for LatentFile export."""
        return LatentGrid(self._values[None])

    def __repr__(self) -> str:
        return f"SimilarityMap({self.height}x{self.width}, mean={self.mean():.4f})"


@dataclass(frozen=True)
class SharpenParams:
    gamma: float = 100.0
    lam: float = 0.08

    def __post_init__(self):
        if not self.gamma > 0.0 or not np.isfinite(self.gamma):
            raise ConfigError(f"gamma must be positive and finite, got {self.gamma}")
        if not np.isfinite(self.lam):
            raise ConfigError(f"lambda must be finite, got {self.lam}")

    def range_warnings(self) -> List[str]:
        """Messages for values outside the recommended ranges (empty if none)."""
        messages = []
        low, high = RECOMMENDED_GAMMA
        if not low <= self.gamma <= high:
            messages.append(f"gamma={self.gamma} is outside the recommended range [{low}, {high}]")
        low, high = RECOMMENDED_LAMBDA
        if self.lam < 0.0:
            messages.append(f"lambda={self.lam} is negative; the threshold will sit below the map mean")
        elif not low <= self.lam <= high:
            messages.append(f"lambda={self.lam} is outside the recommended range [{low}, {high}]")
        return messages

    def warn_if_unusual(self) -> None:
        for message in self.range_warnings():
            log.warning(message)


def _require_same_shape(a: LatentGrid, b: LatentGrid) -> None:
    if a.values.shape != b.values.shape:
        raise ShapeMismatchError(f"Cannot compare grids of shape {a.values.shape} and {b.values.shape}")


def cosine_map(a: LatentGrid, b: LatentGrid) -> SimilarityMap:
    """Per-pixel cosine between the channel vectors of a and b."""
    _require_same_shape(a, b)
    u, v = a.values, b.values
    dot = (u * v).sum(axis=0)
    norms = np.sqrt((u * u).sum(axis=0)) * np.sqrt((v * v).sum(axis=0))
    cos = dot / np.maximum(norms, COSINE_GUARD)
    return SimilarityMap._wrap(np.clip(cos, -1.0, 1.0))


def block_average(smap: SimilarityMap, block: int) -> SimilarityMap:
    """Average a map over non-overlapping block x block tiles, broadcast back to full size.

    Edge tiles keep their true pixel count.
    """
    if isinstance(block, bool) or not isinstance(block, (int, np.integer)) or block < 1:
        raise ValueError(f"block size must be a positive integer, got {block!r}")
    values = smap.values
    height, width = values.shape
    rows = np.arange(0, height, block)
    cols = np.arange(0, width, block)
    row_sizes = np.diff(np.append(rows, height))
    col_sizes = np.diff(np.append(cols, width))
    sums = np.add.reduceat(np.add.reduceat(values, rows, axis=0), cols, axis=1)
    tiles = sums / np.outer(row_sizes, col_sizes)
    full = np.repeat(np.repeat(tiles, row_sizes, axis=0), col_sizes, axis=1)
    return SimilarityMap._wrap(np.clip(full, -1.0, 1.0))


def block_map(a: LatentGrid, b: LatentGrid, block: int) -> SimilarityMap:
    return block_average(cosine_map(a, b), block)


def mix_maps(cos: SimilarityMap, block: SimilarityMap, alpha: float) -> SimilarityMap:
    """alpha * cos + (1 - alpha) * block."""
    if cos.spatial != block.spatial:
        raise ShapeMismatchError(f"Cannot mix maps of size {cos.spatial} and {block.spatial}")
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return cos
    if alpha == 0.0:
        return block
    return SimilarityMap._wrap(alpha * cos.values + (1.0 - alpha) * block.values)


def adaptive_threshold(s_mix: SimilarityMap, lam: float) -> float:
    """tau = mean + lam * (max - min) of this map."""
    return s_mix.mean() + lam * (s_mix.max() - s_mix.min())


def sharpen(s_mix: SimilarityMap, params: SharpenParams) -> SimilarityMap:
    """Logistic around the adaptive threshold, clipped to stay strictly inside (0, 1)."""
    values = s_mix.values
    if s_mix.max() == s_mix.min():
        return SimilarityMap._wrap(np.full(values.shape, 0.5))
    tau = adaptive_threshold(s_mix, params.lam)
    sharpened = expit(params.gamma * (values - tau))
    return SimilarityMap._wrap(np.clip(sharpened, OPEN_INTERVAL_EPS, 1.0 - OPEN_INTERVAL_EPS))


def raw_weights(s_mix: SimilarityMap) -> SimilarityMap:
    """S_mix clipped to [0, 1], the fusion weight when sharpening is disabled."""
    return SimilarityMap._wrap(np.clip(s_mix.values, 0.0, 1.0))


class SimilarityStack(NamedTuple):
    cosine: SimilarityMap
    block: SimilarityMap
    mixed: SimilarityMap
    weights: SimilarityMap


def similarity_stack(
    z: LatentGrid,
    z_ref: LatentGrid,
    alpha_mix: float,
    block_size: int,
    params: SharpenParams,
    sharpen_maps: bool = True,
) -> SimilarityStack:
    """Every intermediate map of one fusion step; ``weights`` is the S fed to fuse."""
    cos = cosine_map(z, z_ref)
    block = block_average(cos, block_size)
    mixed = mix_maps(cos, block, alpha_mix)
    weights = sharpen(mixed, params) if sharpen_maps else raw_weights(mixed)
    return SimilarityStack(cos, block, mixed, weights)
