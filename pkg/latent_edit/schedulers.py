"""DDIM and rectified-flow schedules, single-step transitions and trajectories.

DDIM schedules are indexed 0..T with alpha_bar[0] == 1 (clean data). RF
schedules are indexed 0..N with timesteps[0] == 0 and timesteps[N] == 1, so
index i always means "noise level i" for both samplers and denoising walks
the index downwards.
"""

from __future__ import annotations

import abc
import logging
import math
import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from latent_edit.errors import ScheduleError, ShapeMismatchError
from latent_edit.latent import LatentGrid, Shape

log = logging.getLogger(__name__)

DEFAULT_BETA_START = 0.00085
DEFAULT_BETA_END = 0.012
DEFAULT_NUM_TRAIN_STEPS = 1000


class DenoiserModel(abc.ABC):
    """A noise / velocity predictor bound to one condition.

    ``predict_noise`` is the F_theta of the DDIM transitions, evaluated at a
    DDIM schedule index; ``predict_velocity`` is the V_theta of the RF Euler
    transitions, evaluated at a continuous time in (0, 1].
    """

    condition: str = "source"

    @abc.abstractmethod
    def with_condition(self, cond: str) -> "DenoiserModel":
        """The same model bound to condition ``cond``."""

    @abc.abstractmethod
    def predict_noise(self, z: LatentGrid, t: int, sched: "DdimSchedule") -> LatentGrid:
        ...

    @abc.abstractmethod
    def predict_velocity(self, z: LatentGrid, t: float) -> LatentGrid:
        ...


class CountingDenoiser(DenoiserModel):
    """Wraps a model and counts evaluations (NFEs) for one run."""

    def __init__(self, model: DenoiserModel):
        self.model = model
        self.condition = model.condition
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return self._calls

    def _count(self) -> None:
        with self._lock:
            self._calls += 1

    def with_condition(self, cond):
        return CountingDenoiser(self.model.with_condition(cond))

    def predict_noise(self, z, t, sched):
        self._count()
        return self.model.predict_noise(z, t, sched)

    def predict_velocity(self, z, t):
        self._count()
        return self.model.predict_velocity(z, t)


@dataclass(frozen=True)
class DdimSchedule:
    """alpha_bar[0..T] with alpha_bar[0] == 1, strictly decreasing, all > 0."""

    alpha_bar: Tuple[float, ...]
    train_timesteps: Tuple[int, ...] = ()

    def __post_init__(self):
        values = tuple(float(a) for a in self.alpha_bar)
        object.__setattr__(self, "alpha_bar", values)
        if len(values) < 2:
            raise ScheduleError("A DDIM schedule needs at least one inference step")
        if values[0] != 1.0:
            raise ScheduleError(f"alpha_bar[0] must be 1 (clean data), got {values[0]}")
        for t in range(1, len(values)):
            if not 0.0 < values[t] < values[t - 1]:
                raise ScheduleError(
                    f"alpha_bar must be strictly decreasing and positive; "
                    f"alpha_bar[{t}]={values[t]} after alpha_bar[{t - 1}]={values[t - 1]}"
                )

    @property
    def num_steps(self) -> int:
        return len(self.alpha_bar) - 1

    def check_index(self, t: int) -> int:
        if isinstance(t, bool) or not isinstance(t, (int, np.integer)):
            raise ScheduleError(f"DDIM timestep must be an integer index, got {t!r}")
        if not 0 <= t <= self.num_steps:
            raise ScheduleError(f"DDIM timestep {t} outside schedule 0..{self.num_steps}")
        return int(t)


@dataclass(frozen=True)
class RfSchedule:
    """timesteps[0..N] strictly increasing from 0 to 1 (t_0 = 0, t_N = 1)."""

    timesteps: Tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(t) for t in self.timesteps)
        object.__setattr__(self, "timesteps", values)
        if len(values) < 2:
            raise ScheduleError("An RF schedule needs at least two timesteps")
        if values[0] != 0.0 or values[-1] != 1.0:
            raise ScheduleError(f"RF timesteps must run from 0 to 1, got {values[0]}..{values[-1]}")
        for i in range(1, len(values)):
            if values[i] <= values[i - 1]:
                raise ScheduleError(f"RF timesteps must be strictly monotone at index {i}")

    @property
    def num_steps(self) -> int:
        return len(self.timesteps) - 1


Schedule = Union[DdimSchedule, RfSchedule]


def build_ddim_schedule(
    num_steps: int,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    num_train_steps: int = DEFAULT_NUM_TRAIN_STEPS,
) -> DdimSchedule:
    """Linear beta grid, cumulative product, uniform-stride subsampling.

    Inference step j (1..T) uses training index
    ``num_train_steps - 1 - stride * (T - j)`` with ``stride = num_train_steps // T``,
    so the last training step is always included.
    """
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ScheduleError(f"Invalid beta range: need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    if num_train_steps < 1:
        raise ScheduleError(f"num_train_steps must be >= 1, got {num_train_steps}")
    if not 1 <= num_steps <= num_train_steps:
        raise ScheduleError(f"num_steps must lie in [1, {num_train_steps}], got {num_steps}")

    betas = np.linspace(beta_start, beta_end, num_train_steps, dtype=np.float64)
    alphas_cumprod = np.cumprod(1.0 - betas)
    stride = num_train_steps // num_steps
    indices = [num_train_steps - 1 - stride * (num_steps - j) for j in range(1, num_steps + 1)]
    alpha_bar = (1.0,) + tuple(float(alphas_cumprod[k]) for k in indices)
    log.debug(f"DDIM schedule: T={num_steps}, stride={stride}, alpha_bar_T={alpha_bar[-1]:.6g}")
    return DdimSchedule(alpha_bar=alpha_bar, train_timesteps=tuple(indices))


def build_rf_schedule(num_steps: int, shift: float = 1.0) -> RfSchedule:
    """Uniform grid on [0, 1], optionally warped by t -> s*t / (1 + (s - 1)*t)."""
    if num_steps < 1:
        raise ScheduleError(f"num_steps must be >= 1, got {num_steps}")
    if shift <= 0.0:
        raise ScheduleError(f"RF shift must be positive, got {shift}")
    grid = np.linspace(0.0, 1.0, num_steps + 1, dtype=np.float64)
    if shift != 1.0:
        grid = shift * grid / (1.0 + (shift - 1.0) * grid)
    grid[0], grid[-1] = 0.0, 1.0
    return RfSchedule(timesteps=tuple(float(t) for t in grid))


def _require_same_shape(a: LatentGrid, b: LatentGrid) -> None:
    if a.values.shape != b.values.shape:
        raise ShapeMismatchError(f"Grid shapes differ: {a.values.shape} vs {b.values.shape}")


def ddim_coefficients(alpha_bar_from: float, alpha_bar_to: float) -> Tuple[float, float]:
    """(latent scale, noise coefficient) of the DDIM move between two noise levels."""
    scale = math.sqrt(alpha_bar_to / alpha_bar_from)
    noise = math.sqrt(1.0 - alpha_bar_to) - math.sqrt((1.0 - alpha_bar_from) * alpha_bar_to / alpha_bar_from)
    return scale, noise


def ddim_forward_diffuse(z0: LatentGrid, eps: LatentGrid, t: int, sched: DdimSchedule) -> LatentGrid:
    _require_same_shape(z0, eps)
    a = sched.alpha_bar[sched.check_index(t)]
    if a == 1.0:
        return z0
    return LatentGrid._wrap(math.sqrt(a) * z0.values + math.sqrt(1.0 - a) * eps.values)


def ddim_denoise_step(z_t: LatentGrid, t: int, model: DenoiserModel, sched: DdimSchedule) -> LatentGrid:
    t = sched.check_index(t)
    if t == 0:
        raise ScheduleError("Cannot denoise from t=0: there is no previous step")
    eps = model.predict_noise(z_t, t, sched)
    _require_same_shape(z_t, eps)
    scale, noise = ddim_coefficients(sched.alpha_bar[t], sched.alpha_bar[t - 1])
    return LatentGrid._wrap(scale * z_t.values + noise * eps.values)


def ddim_invert_step(z_prev: LatentGrid, t: int, model: DenoiserModel, sched: DdimSchedule) -> LatentGrid:
    """z_{t-1} -> z_t with F_theta evaluated at (z_{t-1}, t-1).

    The noise prediction is undefined at the clean endpoint (alpha_bar == 1),
    so the first step out of clean data evaluates the predictor at t instead.
    """
    t = sched.check_index(t)
    if t == 0:
        raise ScheduleError("Cannot invert into t=0: there is no previous step")
    eval_t = t - 1 if sched.alpha_bar[t - 1] < 1.0 else t
    eps = model.predict_noise(z_prev, eval_t, sched)
    _require_same_shape(z_prev, eps)
    scale, noise = ddim_coefficients(sched.alpha_bar[t - 1], sched.alpha_bar[t])
    return LatentGrid._wrap(scale * z_prev.values + noise * eps.values)


def rf_forward_diffuse(z0: LatentGrid, eps: LatentGrid, t: float) -> LatentGrid:
    _require_same_shape(z0, eps)
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ScheduleError(f"RF time must lie in [0, 1], got {t}")
    if t == 0.0:
        return z0
    if t == 1.0:
        return eps
    return LatentGrid._wrap(t * eps.values + (1.0 - t) * z0.values)


def _check_rf_interval(t_i: float, t_prev: float) -> None:
    if not 0.0 <= t_prev < t_i <= 1.0:
        raise ScheduleError(f"RF step needs 0 <= t_prev < t_i <= 1, got t_prev={t_prev}, t_i={t_i}")


def rf_denoise_step(z: LatentGrid, t_i: float, t_prev: float, model: DenoiserModel) -> LatentGrid:
    """Euler step z_{t_prev} = z + (t_prev - t_i) * V(z, t_i)."""
    _check_rf_interval(t_i, t_prev)
    velocity = model.predict_velocity(z, t_i)
    _require_same_shape(z, velocity)
    return LatentGrid._wrap(z.values + (t_prev - t_i) * velocity.values)


def rf_invert_step(z: LatentGrid, t_i: float, t_prev: float, model: DenoiserModel) -> LatentGrid:
    """Euler step z_{t_i} = z + (t_i - t_prev) * V(z, t_prev); V at t_i when t_prev == 0."""
    _check_rf_interval(t_i, t_prev)
    eval_t = t_prev if t_prev > 0.0 else t_i
    velocity = model.predict_velocity(z, eval_t)
    _require_same_shape(z, velocity)
    return LatentGrid._wrap(z.values + (t_i - t_prev) * velocity.values)


class Trajectory:
    """One latent per schedule index, z*_0 .. z*_T, all of one shape."""

    __slots__ = ("_entries",)

    def __init__(self, entries: Sequence[LatentGrid]):
        entries = tuple(entries)
        if not entries:
            raise ValueError("A trajectory needs at least one entry")
        first = entries[0].values.shape
        for i, entry in enumerate(entries):
            if entry.values.shape != first:
                raise ShapeMismatchError(f"Trajectory entry {i} has shape {entry.values.shape}, expected {first}")
        self._entries = entries

    @property
    def shape(self) -> Shape:
        return self._entries[0].shape

    @property
    def entries(self) -> Tuple[LatentGrid, ...]:
        return self._entries

    @property
    def final(self) -> LatentGrid:
        return self._entries[-1]

    def __len__(self) -> int:
        return len(self._entries)

    def __getitem__(self, index: int) -> LatentGrid:
        return self._entries[index]

    def __iter__(self):
        return iter(self._entries)


def forward_diffuse(z0: LatentGrid, eps: LatentGrid, index: int, sched: Schedule) -> LatentGrid:
    """Clean latent to noise level ``index`` of either schedule."""
    if isinstance(sched, DdimSchedule):
        return ddim_forward_diffuse(z0, eps, index, sched)
    return rf_forward_diffuse(z0, eps, sched.timesteps[index])


def denoise_step(z: LatentGrid, index: int, model: DenoiserModel, sched: Schedule) -> LatentGrid:
    """Noise level ``index`` to ``index - 1`` of either schedule."""
    if isinstance(sched, DdimSchedule):
        return ddim_denoise_step(z, index, model, sched)
    if not 1 <= index <= sched.num_steps:
        raise ScheduleError(f"RF step index {index} outside 1..{sched.num_steps}")
    return rf_denoise_step(z, sched.timesteps[index], sched.timesteps[index - 1], model)


def invert_step(z: LatentGrid, index: int, model: DenoiserModel, sched: Schedule) -> LatentGrid:
    """Noise level ``index - 1`` to ``index`` of either schedule."""
    if isinstance(sched, DdimSchedule):
        return ddim_invert_step(z, index, model, sched)
    if not 1 <= index <= sched.num_steps:
        raise ScheduleError(f"RF step index {index} outside 1..{sched.num_steps}")
    return rf_invert_step(z, sched.timesteps[index], sched.timesteps[index - 1], model)


def invert_trajectory(z0: LatentGrid, model: DenoiserModel, sched: Schedule) -> Trajectory:
    """Invert a clean latent through every schedule level; one NFE per step."""
    entries = [z0]
    z = z0
    for index in range(1, sched.num_steps + 1):
        z = invert_step(z, index, model, sched)
        entries.append(z)
    log.debug(f"Inverted {sched.num_steps} steps under condition '{model.condition}'")
    return Trajectory(entries)


def denoise_loop(
    z_start: LatentGrid,
    model: DenoiserModel,
    sched: Schedule,
    on_step: Optional[Callable[[int, LatentGrid], LatentGrid]] = None,
) -> LatentGrid:
    """Denoise from the top noise level to 0.

    ``on_step(index, z)`` receives the latent just produced at level
    ``index`` and returns the latent to continue from.
    """
    z = z_start
    for index in range(sched.num_steps, 0, -1):
        z = denoise_step(z, index, model, sched)
        if on_step is not None:
            z = on_step(index - 1, z)
    return z


def noise_level(sched: Schedule, index: int) -> float:
    """0 at clean data, 1 at pure noise: 1 - alpha_bar for DDIM, t for RF."""
    if isinstance(sched, DdimSchedule):
        return 1.0 - sched.alpha_bar[index]
    return sched.timesteps[index]
