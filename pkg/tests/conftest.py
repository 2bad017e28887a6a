import os
import sys

import numpy as np
import pytest

# Ensure project root is on sys.path for absolute imports in tests
ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from latent_edit.denoisers import SOURCE, TARGET, MixtureComponent, MixtureDenoiser  # noqa: E402
from latent_edit.latent import LatentGrid, Seed, Shape, sample_gaussian  # noqa: E402
from latent_edit.scenario import ScenarioSpec, generate_scenario  # noqa: E402
from latent_edit.schedulers import DenoiserModel  # noqa: E402


class ConstantPredictor(DenoiserModel):
    """Returns the same grid for every input (zero grid by default)."""

    def __init__(self, value: LatentGrid, condition: str = SOURCE):
        self.value = value
        self.condition = condition

    def with_condition(self, cond):
        return ConstantPredictor(self.value, cond)

    def predict_noise(self, z, t, sched):
        return self.value

    def predict_velocity(self, z, t):
        return self.value


@pytest.fixture
def shape():
    return Shape(4, 16, 16)


@pytest.fixture
def zero_predictor(shape):
    return ConstantPredictor(LatentGrid(np.zeros(shape.as_tuple())))


@pytest.fixture
def constant_predictor(shape):
    return ConstantPredictor(sample_gaussian(shape, 99))


@pytest.fixture
def round_trip_mixture(shape):
    """Two well-separated components (mean rms ~10, variance 0.25) and a sample near the first."""
    means = [sample_gaussian(shape, Seed(11).derive(k)).scale(10.0) for k in range(2)]
    components = [MixtureComponent(0.5, mean, 0.25) for mean in means]
    mixture = MixtureDenoiser({SOURCE: components, TARGET: components})
    z0 = means[0] + sample_gaussian(shape, Seed(11).derive(5)).scale(0.5)
    return mixture, z0


@pytest.fixture
def gaussian_rf():
    """Single Gaussian with constant mean 5 and variance 0.25, plus a sample from it."""
    shape = Shape(4, 16, 16)
    mean = LatentGrid(np.full(shape.as_tuple(), 5.0))
    mixture = MixtureDenoiser({SOURCE: [MixtureComponent(1.0, mean, 0.25)]})
    z0 = mean + sample_gaussian(shape, 23).scale(0.5)
    return mixture, mean, z0


def localized_spec(seed: int = 7, drift: float = 1.0, **overrides) -> ScenarioSpec:
    params = dict(shape=Shape(4, 16, 16), mask=(4, 4, 12, 12), seed=seed, background_drift=drift)
    params.update(overrides)
    return ScenarioSpec(**params)


@pytest.fixture
def localized_scenario():
    return generate_scenario(localized_spec())
