"""Localized-edit fixtures for the analytic denoisers, and their scoring.

A scenario has a background attractor shared by the source and target
conditions and, inside a rectangular edit mask, a different attractor per
condition. The source latent is drawn around the first source component.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from latent_edit.denoisers import SOURCE, TARGET, MixtureComponent, MixtureDenoiser
from latent_edit.errors import ScenarioError
from latent_edit.latent import LatentGrid, Seed, Shape, sample_gaussian
from latent_edit.metrics import masked_psnr

log = logging.getLogger(__name__)

Mask = Tuple[int, int, int, int]


@dataclass(frozen=True)
class ScenarioSpec:
    """Fixture parameters.

    ``mask`` is (top, left, bottom, right) with half-open rows and columns.
    ``background_drift`` inflates the target variance by (1 + drift)^2 so
    that unfused target generation drifts away from the source background.
    """

    shape: Shape = Shape(4, 16, 16)
    mask: Mask = (4, 4, 12, 12)
    seed: int = 7
    components: int = 1
    background_scale: float = 1.0
    edit_scale: float = 1.0
    variance: float = 0.05
    background_drift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape.of(self.shape))
        object.__setattr__(self, "mask", tuple(int(v) for v in self.mask))
        if len(self.mask) != 4:
            raise ScenarioError(f"mask must be (top, left, bottom, right), got {self.mask}")
        top, left, bottom, right = self.mask
        height, width = self.shape.spatial
        if not (0 <= top <= bottom <= height and 0 <= left <= right <= width):
            raise ScenarioError(f"mask {self.mask} out of bounds for a {height}x{width} grid")
        if self.components < 1:
            raise ScenarioError(f"components must be >= 1, got {self.components}")
        if self.variance < 0.0:
            raise ScenarioError(f"variance must be >= 0, got {self.variance}")
        if self.background_drift <= -1.0:
            raise ScenarioError(f"background_drift must be > -1, got {self.background_drift}")

    def region(self) -> np.ndarray:
        """H x W boolean edit-region mask."""
        top, left, bottom, right = self.mask
        region = np.zeros(self.shape.spatial, dtype=bool)
        region[top:bottom, left:right] = True
        return region


@dataclass(frozen=True)
class Scenario:
    spec: ScenarioSpec
    z0_source: LatentGrid
    denoiser: MixtureDenoiser
    region: np.ndarray

    @property
    def background(self) -> np.ndarray:
        return ~self.region

    def source_attractors(self) -> Tuple[LatentGrid, ...]:
        return tuple(c.mean for c in self.denoiser.components(SOURCE))

    def target_attractors(self) -> Tuple[LatentGrid, ...]:
        return tuple(c.mean for c in self.denoiser.components(TARGET))


@dataclass(frozen=True)
class LocalizedScore:
    background_psnr: float
    edit_distance: float


def generate_scenario(spec: ScenarioSpec) -> Scenario:
    """Build the source latent and the two-condition mixture for ``spec``."""
    shape = spec.shape
    root = Seed(spec.seed)
    region = spec.region()
    inside = region[None]
    weight = 1.0 / spec.components
    target_variance = spec.variance * (1.0 + spec.background_drift) ** 2

    source, target = [], []
    for k in range(spec.components):
        background = sample_gaussian(shape, root.derive(3 * k)).values * spec.background_scale
        source_edit = sample_gaussian(shape, root.derive(3 * k + 1)).values * spec.edit_scale
        target_edit = sample_gaussian(shape, root.derive(3 * k + 2)).values * spec.edit_scale
        source.append(MixtureComponent(weight, LatentGrid(np.where(inside, source_edit, background)), spec.variance))
        target.append(MixtureComponent(weight, LatentGrid(np.where(inside, target_edit, background)), target_variance))

    noise = sample_gaussian(shape, root.derive(3 * spec.components))
    z0_source = LatentGrid(source[0].mean.values + math.sqrt(spec.variance) * noise.values)
    denoiser = MixtureDenoiser({SOURCE: source, TARGET: target})
    log.debug(f"Scenario {shape} mask={spec.mask} seed={spec.seed}: {int(region.sum())} edit pixels")
    return Scenario(spec=spec, z0_source=z0_source, denoiser=denoiser, region=region)


def region_rms(a: LatentGrid, b: LatentGrid, region: np.ndarray) -> float:
    diff = (a.values - b.values)[:, region]
    return float(np.sqrt(np.mean(diff * diff)))


def score_localized_edit(result: LatentGrid, scenario: Scenario) -> LocalizedScore:
    """Background PSNR against the source latent and edit-region RMS distance to the target.

    The PSNR peak is the source latent's value range. The distance is to the
    nearest target attractor. Either score is NaN when its region is empty.
    """
    z0 = scenario.z0_source
    background = scenario.background
    if background.any():
        peak = float(z0.values.max() - z0.values.min()) or 1.0
        background_psnr = masked_psnr(result, z0, background, peak)
    else:
        background_psnr = math.nan
    if scenario.region.any():
        edit_distance = min(region_rms(result, mean, scenario.region) for mean in scenario.target_attractors())
    else:
        edit_distance = math.nan
    return LocalizedScore(background_psnr=background_psnr, edit_distance=edit_distance)
