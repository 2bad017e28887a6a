"""Analytic Gaussian-mixture denoisers with closed-form noise and velocity predictors.

Each condition holds a list of components (weight, mean grid, variance).
Under a forward process z = a * z0 + b * eps every component has the
per-pixel marginal N(a * mu_k, (a^2 sigma_k^2 + b^2) I), where a pixel is the
C-vector at (h, w). DDIM uses a = sqrt(alpha_bar), b^2 = 1 - alpha_bar; RF
uses a = 1 - t, b^2 = t^2.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from latent_edit.errors import DenoiserError, ShapeMismatchError
from latent_edit.latent import LatentGrid, Shape
from latent_edit.schedulers import DdimSchedule, DenoiserModel

log = logging.getLogger(__name__)

ConditionId = str

SOURCE: ConditionId = "source"
TARGET: ConditionId = "target"

WEIGHT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: LatentGrid
    variance: float

    def __post_init__(self):
        if not self.weight > 0.0 or not math.isfinite(self.weight):
            raise DenoiserError(f"Component weight must be positive and finite, got {self.weight}")
        if not self.variance >= 0.0 or not math.isfinite(self.variance):
            raise DenoiserError(f"Component variance must be >= 0 and finite, got {self.variance}")


class MixtureDenoiser(DenoiserModel):
    """Per-condition Gaussian mixtures over latent grids of one shape.

    As a DenoiserModel it predicts under ``condition`` (the source condition
    when present, else the first one listed); ``with_condition`` binds another.
    """

    def __init__(self, conditions: Mapping[ConditionId, Sequence[MixtureComponent]]):
        if not conditions:
            raise DenoiserError("A mixture denoiser needs at least one condition")
        shape = None
        table: Dict[ConditionId, Tuple[MixtureComponent, ...]] = {}
        for cond, components in conditions.items():
            components = tuple(components)
            if not components:
                raise DenoiserError(f"Condition '{cond}' has no components")
            total = math.fsum(c.weight for c in components)
            if abs(total - 1.0) > WEIGHT_TOLERANCE:
                raise DenoiserError(f"Weights of condition '{cond}' sum to {total!r}, expected 1")
            for component in components:
                if shape is None:
                    shape = component.mean.shape
                elif component.mean.shape != shape:
                    raise ShapeMismatchError(
                        f"Component mean of condition '{cond}' has shape {component.mean.shape}, expected {shape}"
                    )
            table[cond] = components
        self._conditions = table
        self._shape = shape
        self.condition = SOURCE if SOURCE in table else next(iter(table))

        # Stacked (K, C, H, W) means and (K,) parameters, built once per condition.
        self._stacked = {
            cond: (
                np.stack([c.mean.values for c in comps]),
                np.array([c.variance for c in comps], dtype=np.float64),
                np.log(np.array([c.weight for c in comps], dtype=np.float64)),
            )
            for cond, comps in table.items()
        }

    @property
    def shape(self) -> Shape:
        return self._shape

    @property
    def conditions(self) -> Tuple[ConditionId, ...]:
        return tuple(self._conditions)

    def components(self, cond: ConditionId) -> Tuple[MixtureComponent, ...]:
        try:
            return self._conditions[cond]
        except KeyError:
            raise DenoiserError(f"Unknown condition '{cond}'; known: {sorted(self._conditions)}") from None

    def _check(self, z: LatentGrid, cond: ConditionId):
        self.components(cond)
        if z.shape != self._shape:
            raise ShapeMismatchError(f"Latent shape {z.shape} does not match denoiser shape {self._shape}")
        return self._stacked[cond]

    def responsibilities(self, z: LatentGrid, scale: float, noise_var: float, cond: ConditionId) -> np.ndarray:
        """(K, H, W) posterior component probabilities of each pixel of z."""
        means, variances, log_weights = self._check(z, cond)
        if noise_var == 0.0 and (scale == 0.0 or not variances.all()):
            raise DenoiserError(
                f"Responsibilities are undefined for noise_var=0 when condition '{cond}' has a point-mass component"
            )
        return self._responsibilities(z.values, means, variances, log_weights, scale, noise_var)

    @staticmethod
    def _responsibilities(z, means, variances, log_weights, scale, noise_var) -> np.ndarray:
        channels = z.shape[0]
        marginal_var = scale * scale * variances + noise_var
        sq_dist = ((z[None] - scale * means) ** 2).sum(axis=1)
        log_lik = (
            log_weights[:, None, None]
            - 0.5 * sq_dist / marginal_var[:, None, None]
            - 0.5 * channels * np.log(2.0 * np.pi * marginal_var)[:, None, None]
        )
        return softmax(log_lik, axis=0)

    def posterior_mean(self, z: LatentGrid, scale: float, noise_var: float, cond: ConditionId) -> LatentGrid:
        """E[z0 | z] under z = scale * z0 + sqrt(noise_var) * eps."""
        means, variances, log_weights = self._check(z, cond)
        if noise_var == 0.0:
            return z
        values = z.values
        resp = self._responsibilities(values, means, variances, log_weights, scale, noise_var)
        gain = scale * variances / (scale * scale * variances + noise_var)
        conditional = means + gain[:, None, None, None] * (values[None] - scale * means)
        return LatentGrid._wrap((resp[:, None] * conditional).sum(axis=0))

    def with_condition(self, cond: ConditionId) -> "ConditionedMixture":
        self.components(cond)
        return ConditionedMixture(self, cond)

    def predict_noise(self, z, t, sched):
        return predict_noise(z, t, sched, self, self.condition)

    def predict_velocity(self, z, t):
        return predict_velocity(z, t, self, self.condition)


def _ddim_terms(t: int, sched: DdimSchedule) -> Tuple[float, float]:
    alpha_bar = sched.alpha_bar[sched.check_index(t)]
    return math.sqrt(alpha_bar), 1.0 - alpha_bar


def _check_rf_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise DenoiserError(f"RF time must lie in [0, 1], got {t}")
    return t


def posterior_mean_ddim(
    z: LatentGrid, t: int, sched: DdimSchedule, model: MixtureDenoiser, cond: ConditionId
) -> LatentGrid:
    scale, noise_var = _ddim_terms(t, sched)
    return model.posterior_mean(z, scale, noise_var, cond)


def posterior_mean_rf(z: LatentGrid, t: float, model: MixtureDenoiser, cond: ConditionId) -> LatentGrid:
    t = _check_rf_time(t)
    return model.posterior_mean(z, 1.0 - t, t * t, cond)


def predict_noise(z: LatentGrid, t: int, sched: DdimSchedule, model: MixtureDenoiser, cond: ConditionId) -> LatentGrid:
    """E[eps | z_t] = (z - sqrt(alpha_bar) * E[z0 | z_t]) / sqrt(1 - alpha_bar)."""
    scale, noise_var = _ddim_terms(t, sched)
    if noise_var <= 0.0:
        raise DenoiserError(f"Noise prediction is undefined at the clean endpoint (t={t}, alpha_bar=1)")
    z0_hat = model.posterior_mean(z, scale, noise_var, cond)
    return LatentGrid._wrap((z.values - scale * z0_hat.values) / math.sqrt(noise_var))


def predict_velocity(z: LatentGrid, t: float, model: MixtureDenoiser, cond: ConditionId) -> LatentGrid:
    """E[eps - z0 | z_t] = (z - E[z0 | z_t]) / t."""
    t = _check_rf_time(t)
    if t == 0.0:
        raise DenoiserError("Velocity prediction is undefined at t=0")
    z0_hat = model.posterior_mean(z, 1.0 - t, t * t, cond)
    return LatentGrid._wrap((z.values - z0_hat.values) / t)


class ConditionedMixture(DenoiserModel):
    """A MixtureDenoiser bound to one condition, usable as a DenoiserModel."""

    def __init__(self, mixture: MixtureDenoiser, condition: ConditionId):
        self.mixture = mixture
        self.condition = condition

    def with_condition(self, cond):
        return self.mixture.with_condition(cond)

    def predict_noise(self, z, t, sched):
        return predict_noise(z, t, sched, self.mixture, self.condition)

    def predict_velocity(self, z, t):
        return predict_velocity(z, t, self.mixture, self.condition)

    def __repr__(self) -> str:
        return f"ConditionedMixture(condition='{self.condition}', shape={self.mixture.shape})"


def single_gaussian(mean: LatentGrid, variance: float, conditions: Iterable[ConditionId] = (SOURCE,)) -> MixtureDenoiser:
    """One-component mixture shared by every listed condition."""
    component = MixtureComponent(weight=1.0, mean=mean, variance=variance)
    return MixtureDenoiser({cond: [component] for cond in conditions})
