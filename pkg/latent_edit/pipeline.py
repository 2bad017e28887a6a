"""Adaptive latent fusion editing loops and their comparison baselines.

Both editing modes share one loop: denoise under the target condition,
compare the fresh latent with the reference chain at the same noise level,
and blend the reference back in where the two agree. They differ only in
where the reference chain and the starting latent come from.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from latent_edit.denoisers import SOURCE, TARGET, ConditionId
from latent_edit.errors import ConfigError, ShapeMismatchError
from latent_edit.latent import LatentGrid, SeedLike, as_seed, lerp, sample_gaussian
from latent_edit.schedulers import (
    DEFAULT_BETA_END,
    DEFAULT_BETA_START,
    DEFAULT_NUM_TRAIN_STEPS,
    CountingDenoiser,
    DenoiserModel,
    Schedule,
    Trajectory,
    build_ddim_schedule,
    build_rf_schedule,
    denoise_loop,
    forward_diffuse,
    invert_trajectory,
    noise_level,
)
from latent_edit.similarity import SharpenParams, SimilarityMap, SimilarityStack, similarity_stack

log = logging.getLogger(__name__)

SAMPLERS = ("ddim", "rf")
MODES = ("inversion", "inversion_free")

# (full, fast) step counts per sampler.
STEP_PRESETS: Dict[str, Tuple[int, int]] = {
    "ddim": (50, 15),
    "rf": (15, 8),
}


def default_steps(sampler: str) -> int:
    return STEP_PRESETS[sampler][1]


@dataclass(frozen=True)
class FusionConfig:
    """Hyperparameters of one editing run.

    ``alpha_mix`` weighs per-pixel cosine against block similarity;
    ``alpha_init`` weighs the source latent against noise when the
    inversion-free mode builds its starting latent. ``steps`` defaults to the
    fast preset of the sampler.
    """

    alpha_mix: float = 0.5
    sharpen: SharpenParams = field(default_factory=SharpenParams)
    block_size: int = 4
    alpha_init: float = 0.7
    sampler: str = "ddim"
    steps: Optional[int] = None
    seed: int = 0
    mode: str = "inversion"
    sharpen_maps: bool = True
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    num_train_steps: int = DEFAULT_NUM_TRAIN_STEPS
    rf_shift: float = 1.0
    keep_maps: bool = False

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"Unknown sampler '{self.sampler}'; expected one of {SAMPLERS}")
        if self.mode not in MODES:
            raise ConfigError(f"Unknown mode '{self.mode}'; expected one of {MODES}")
        if self.steps is None:
            object.__setattr__(self, "steps", default_steps(self.sampler))
        if isinstance(self.steps, bool) or not isinstance(self.steps, (int, np.integer)) or self.steps < 1:
            raise ConfigError(f"steps must be a positive integer, got {self.steps!r}")
        if isinstance(self.block_size, bool) or not isinstance(self.block_size, (int, np.integer)) or self.block_size < 1:
            raise ConfigError(f"block_size must be a positive integer, got {self.block_size!r}")
        for name in ("alpha_mix", "alpha_init"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if not isinstance(self.sharpen, SharpenParams):
            raise ConfigError(f"sharpen must be SharpenParams, got {type(self.sharpen).__name__}")
        as_seed(self.seed)

    def schedule(self) -> Schedule:
        if self.sampler == "ddim":
            return build_ddim_schedule(self.steps, self.beta_start, self.beta_end, self.num_train_steps)
        return build_rf_schedule(self.steps, self.rf_shift)


@dataclass(frozen=True)
class StepStatistics:
    """Similarity summary of one denoising step, at the level the step lands on."""

    index: int
    noise_level: float
    s_mean: float
    s_min: float
    s_max: float
    s_var: float
    mix_mean: float
    mix_var: float

    @classmethod
    def from_stack(cls, index: int, level: float, stack: SimilarityStack) -> "StepStatistics":
        weights, mixed = stack.weights, stack.mixed
        return cls(
            index=index,
            noise_level=level,
            s_mean=weights.mean(),
            s_min=weights.min(),
            s_max=weights.max(),
            s_var=weights.var(),
            mix_mean=mixed.mean(),
            mix_var=mixed.var(),
        )


@dataclass
class EditReport:
    edited: LatentGrid
    nfe_inversion: int
    nfe_denoise: int
    mode: str
    steps: List[StepStatistics] = field(default_factory=list)
    maps: List[SimilarityStack] = field(default_factory=list)
    reference: Optional[Trajectory] = None

    @property
    def nfe_total(self) -> int:
        return self.nfe_inversion + self.nfe_denoise

    def step_at(self, index: int) -> StepStatistics:
        for stats in self.steps:
            if stats.index == index:
                return stats
        raise KeyError(f"No step statistics recorded for index {index}")


def fuse(z: LatentGrid, z_ref: LatentGrid, s: SimilarityMap) -> LatentGrid:
    """z + S * (z_ref - z), with the H x W map broadcast over channels."""
    if z.values.shape != z_ref.values.shape:
        raise ShapeMismatchError(f"Cannot fuse grids of shape {z.values.shape} and {z_ref.values.shape}")
    if s.spatial != z.values.shape[1:]:
        raise ShapeMismatchError(f"Similarity map {s.spatial} does not match latent spatial dims {z.values.shape[1:]}")
    weights = s.values
    if weights.min() < 0.0 or weights.max() > 1.0:
        raise ValueError(f"Fusion weights must lie in [0, 1], got range [{weights.min()}, {weights.max()}]")
    a, b = z.values, z_ref.values
    w = weights[None]
    blended = a + w * (b - a)
    # Rounding can step one ulp outside the input span.
    blended = np.clip(blended, np.minimum(a, b), np.maximum(a, b))
    blended = np.where(w == 0.0, a, np.where(w == 1.0, b, blended))
    return LatentGrid._wrap(blended)


def _fused_denoise(
    z_start: LatentGrid,
    reference: Trajectory,
    model: CountingDenoiser,
    sched: Schedule,
    config: FusionConfig,
) -> Tuple[LatentGrid, List[StepStatistics], List[SimilarityStack]]:
    if len(reference) != sched.num_steps + 1:
        raise ShapeMismatchError(
            f"Reference chain has {len(reference)} entries, schedule needs {sched.num_steps + 1}"
        )
    if reference.shape != z_start.shape:
        raise ShapeMismatchError(f"Reference shape {reference.shape} does not match latent shape {z_start.shape}")

    steps: List[StepStatistics] = []
    maps: List[SimilarityStack] = []

    def fuse_with_reference(index: int, z: LatentGrid) -> LatentGrid:
        z_ref = reference[index]
        stack = similarity_stack(
            z, z_ref, config.alpha_mix, config.block_size, config.sharpen, config.sharpen_maps
        )
        stats = StepStatistics.from_stack(index, noise_level(sched, index), stack)
        log.debug(
            f"step {index}: S mean={stats.s_mean:.4f} min={stats.s_min:.4f} "
            f"max={stats.s_max:.4f} var={stats.s_var:.4g}, S_mix var={stats.mix_var:.4g}"
        )
        steps.append(stats)
        if config.keep_maps:
            maps.append(stack)
        return fuse(z, z_ref, stack.weights)

    edited = denoise_loop(z_start, model, sched, on_step=fuse_with_reference)
    return edited, steps, maps


def _start_run(config: FusionConfig, expected_mode: str, label: str) -> Schedule:
    if config.mode != expected_mode:
        raise ConfigError(f"{label} requires mode '{expected_mode}', config has '{config.mode}'")
    config.sharpen.warn_if_unusual()
    log.info(
        f"Starting {label}: sampler={config.sampler}, steps={config.steps}, "
        f"gamma={config.sharpen.gamma}, lambda={config.sharpen.lam}, block_size={config.block_size}"
    )
    return config.schedule()


def edit_with_inversion(
    z0_source: LatentGrid,
    model: DenoiserModel,
    source_cond: ConditionId = SOURCE,
    target_cond: ConditionId = TARGET,
    config: Optional[FusionConfig] = None,
) -> EditReport:
    """Invert the source latent, then denoise under the target with fusion at every step.

    Args:
        z0_source: Clean source latent.
        model: Denoiser; ``model.with_condition(c)`` binds the source or target condition.
        source_cond: Condition used for inversion.
        target_cond: Condition used for denoising.
        config: Run hyperparameters (mode must be ``inversion``).

    Returns:
        EditReport with the fused z_0 and NFE counts of both passes.
    """
    config = config or FusionConfig()
    sched = _start_run(config, "inversion", "edit with inversion")
    source = CountingDenoiser(model.with_condition(source_cond))
    target = CountingDenoiser(model.with_condition(target_cond))

    reference = invert_trajectory(z0_source, source, sched)
    edited, steps, maps = _fused_denoise(reference.final, reference, target, sched, config)

    log.info(f"Edit with inversion finished: NFE inversion={source.calls}, denoise={target.calls}")
    return EditReport(
        edited=edited,
        nfe_inversion=source.calls,
        nfe_denoise=target.calls,
        mode=config.mode,
        steps=steps,
        maps=maps,
        reference=reference,
    )


def init_inversion_free(z0: LatentGrid, seed: SeedLike, alpha_init: float) -> LatentGrid:
    """alpha_init * z0 + (1 - alpha_init) * eps, eps drawn from ``seed``."""
    eps = sample_gaussian(z0.shape, as_seed(seed))
    return lerp(z0, eps, alpha_init)


def pseudo_reference_chain(z0: LatentGrid, sched: Schedule, seed: SeedLike) -> Trajectory:
    """Forward-diffuse z0 to every schedule level with one shared noise sample."""
    eps = sample_gaussian(z0.shape, as_seed(seed))
    return Trajectory([forward_diffuse(z0, eps, index, sched) for index in range(sched.num_steps + 1)])


def edit_inversion_free(
    z0_source: LatentGrid,
    model: DenoiserModel,
    target_cond: ConditionId = TARGET,
    config: Optional[FusionConfig] = None,
) -> EditReport:
    """Fusion editing against a forward-diffused reference chain; no inversion pass."""
    config = config or FusionConfig(mode="inversion_free")
    sched = _start_run(config, "inversion_free", "inversion-free edit")
    target = CountingDenoiser(model.with_condition(target_cond))

    z_start = init_inversion_free(z0_source, config.seed, config.alpha_init)
    reference = pseudo_reference_chain(z0_source, sched, config.seed)
    edited, steps, maps = _fused_denoise(z_start, reference, target, sched, config)

    log.info(f"Inversion-free edit finished: NFE denoise={target.calls}")
    return EditReport(
        edited=edited,
        nfe_inversion=0,
        nfe_denoise=target.calls,
        mode=config.mode,
        steps=steps,
        maps=maps,
        reference=reference,
    )


def run_edit(
    z0_source: LatentGrid,
    model: DenoiserModel,
    config: FusionConfig,
    source_cond: ConditionId = SOURCE,
    target_cond: ConditionId = TARGET,
) -> EditReport:
    """Dispatch on ``config.mode``."""
    if config.mode == "inversion":
        return edit_with_inversion(z0_source, model, source_cond, target_cond, config)
    return edit_inversion_free(z0_source, model, target_cond, config)


def reconstruct(
    z0_source: LatentGrid,
    model: DenoiserModel,
    source_cond: ConditionId = SOURCE,
    config: Optional[FusionConfig] = None,
) -> EditReport:
    """Invert and denoise under the source condition, no fusion."""
    config = config or FusionConfig()
    sched = config.schedule()
    source = CountingDenoiser(model.with_condition(source_cond))
    reference = invert_trajectory(z0_source, source, sched)
    inversion_calls = source.calls
    edited = denoise_loop(reference.final, source, sched)
    return EditReport(
        edited=edited,
        nfe_inversion=inversion_calls,
        nfe_denoise=source.calls - inversion_calls,
        mode="reconstruction",
        reference=reference,
    )


def generate_unfused(
    z0_source: LatentGrid,
    model: DenoiserModel,
    source_cond: ConditionId = SOURCE,
    target_cond: ConditionId = TARGET,
    config: Optional[FusionConfig] = None,
) -> EditReport:
    """Denoise under the target from the same starting latent as the edit, without fusion."""
    config = config or FusionConfig()
    sched = config.schedule()
    target = CountingDenoiser(model.with_condition(target_cond))
    if config.mode == "inversion":
        source = CountingDenoiser(model.with_condition(source_cond))
        reference = invert_trajectory(z0_source, source, sched)
        z_start, nfe_inversion = reference.final, source.calls
    else:
        z_start, nfe_inversion = init_inversion_free(z0_source, config.seed, config.alpha_init), 0
    edited = denoise_loop(z_start, target, sched)
    return EditReport(edited=edited, nfe_inversion=nfe_inversion, nfe_denoise=target.calls, mode="unfused")
