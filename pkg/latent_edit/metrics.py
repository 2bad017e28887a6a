"""Fidelity metrics on latent grids: MSE, PSNR, SSIM and their region-restricted forms."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import convolve2d

from latent_edit.errors import ShapeMismatchError
from latent_edit.latent import LatentGrid

log = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: Optional[float]
    mse: float

    def as_record(self) -> dict:
        """JSON-safe record: infinite PSNR becomes the string "inf"."""
        psnr = "inf" if math.isinf(self.psnr_db) else self.psnr_db
        return {"mse": self.mse, "psnr": psnr, "ssim": self.ssim}


def _require_same_shape(a: LatentGrid, b: LatentGrid) -> None:
    if a.values.shape != b.values.shape:
        raise ShapeMismatchError(f"Cannot compare grids of shape {a.values.shape} and {b.values.shape}")


def _check_positive(name: str, value: float) -> float:
    value = float(value)
    if not value > 0.0 or not math.isfinite(value):
        raise ValueError(f"{name} must be positive and finite, got {value}")
    return value


def mse(a: LatentGrid, b: LatentGrid) -> float:
    _require_same_shape(a, b)
    diff = a.values - b.values
    return float(np.mean(diff * diff))


def psnr_from_mse(error: float, max_val: float) -> float:
    if error == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / error)


def psnr(a: LatentGrid, b: LatentGrid, max_val: float) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical inputs."""
    max_val = _check_positive("max_val", max_val)
    return psnr_from_mse(mse(a, b), max_val)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized size x size Gaussian kernel."""
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a: LatentGrid, b: LatentGrid, dynamic_range: float) -> float:
    """Single-scale SSIM averaged over channels and valid window positions."""
    _require_same_shape(a, b)
    dynamic_range = _check_positive("dynamic_range", dynamic_range)
    _, height, width = a.values.shape
    if height < SSIM_WINDOW or width < SSIM_WINDOW:
        raise ValueError(f"SSIM needs spatial dims >= {SSIM_WINDOW}, got {height}x{width}")

    window = gaussian_window()
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2

    def filt(x: np.ndarray) -> np.ndarray:
        return convolve2d(x, window, mode="valid")

    scores = []
    for x, y in zip(a.values, b.values):
        mu_x, mu_y = filt(x), filt(y)
        var_x = filt(x * x) - mu_x * mu_x
        var_y = filt(y * y) - mu_y * mu_y
        cov = filt(x * y) - mu_x * mu_y
        numerator = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        scores.append(float(np.mean(numerator / denominator)))
    return float(np.clip(np.mean(scores), -1.0, 1.0))


def compare(a: LatentGrid, b: LatentGrid, data_range: float) -> MetricReport:
    """MSE, PSNR and SSIM with one data range; SSIM is None when the grid is too small."""
    error = mse(a, b)
    score = None
    _, height, width = a.values.shape
    if height >= SSIM_WINDOW and width >= SSIM_WINDOW:
        score = ssim(a, b, data_range)
    return MetricReport(psnr_db=psnr_from_mse(error, _check_positive("data_range", data_range)), ssim=score, mse=error)


def _check_mask(grid: LatentGrid, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != grid.values.shape[1:]:
        raise ShapeMismatchError(f"Mask {mask.shape} does not match spatial dims {grid.values.shape[1:]}")
    if not mask.any():
        raise ValueError("Region mask selects no pixels")
    return mask


def masked_mse(a: LatentGrid, b: LatentGrid, mask: np.ndarray) -> float:
    """MSE over the pixels selected by an H x W boolean mask, all channels."""
    _require_same_shape(a, b)
    mask = _check_mask(a, mask)
    diff = (a.values - b.values)[:, mask]
    return float(np.mean(diff * diff))


def masked_psnr(a: LatentGrid, b: LatentGrid, mask: np.ndarray, max_val: float) -> float:
    max_val = _check_positive("max_val", max_val)
    return psnr_from_mse(masked_mse(a, b, mask), max_val)
