"""TOML run configuration: sampler, fusion, scenario and output tables."""

from __future__ import annotations

import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from latent_edit.denoisers import SOURCE, TARGET, MixtureComponent, MixtureDenoiser
from latent_edit.errors import ConfigError, LatentEditError
from latent_edit.latent import Shape
from latent_edit.latent_io import read_latent
from latent_edit.pipeline import FusionConfig
from latent_edit.scenario import Scenario, ScenarioSpec, generate_scenario
from latent_edit.similarity import SharpenParams

log = logging.getLogger(__name__)

SCHEMA: Dict[str, Tuple[str, ...]] = {
    "sampler": ("kind", "steps", "seed", "beta_start", "beta_end", "num_train_steps", "rf_shift"),
    "fusion": ("mode", "alpha_mix", "gamma", "lambda", "block_size", "alpha_init", "sharpen"),
    "scenario": (
        "channels", "height", "width", "mask", "seed", "components", "background_scale",
        "edit_scale", "variance", "background_drift", "source_latent", "conditions",
    ),
    "output": ("directory", "export_maps", "export_trajectory", "plot", "log_level"),
}
CONDITION_KEYS = ("components",)
COMPONENT_KEYS = ("weight", "variance", "mean")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


@dataclass(frozen=True)
class OutputConfig:
    directory: Path = Path("out")
    export_maps: bool = False
    export_trajectory: bool = False
    plot: bool = False
    log_level: str = "INFO"


@dataclass(frozen=True)
class ComponentRef:
    weight: float
    variance: float
    mean: Path


@dataclass(frozen=True)
class RunConfig:
    fusion: FusionConfig = field(default_factory=FusionConfig)
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    output: OutputConfig = field(default_factory=OutputConfig)
    source_latent: Optional[Path] = None
    conditions: Optional[Mapping[str, Tuple[ComponentRef, ...]]] = None
    path: Optional[Path] = None

    def with_fusion(self, **changes) -> "RunConfig":
        """Copy with FusionConfig fields replaced (``steps=None`` restores the preset)."""
        try:
            return replace(self, fusion=replace(self.fusion, **changes))
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def build_scenario(self) -> Scenario:
        """Generated fixture, or the file-backed mixture when conditions are given."""
        if self.conditions is None:
            return generate_scenario(self.scenario)
        if self.source_latent is None:
            raise ConfigError("scenario.source_latent is required when scenario.conditions is set")
        z0 = read_latent(self.source_latent)
        mixture = MixtureDenoiser(
            {
                cond: [MixtureComponent(ref.weight, read_latent(ref.mean), ref.variance) for ref in refs]
                for cond, refs in self.conditions.items()
            }
        )
        if mixture.shape != z0.shape:
            raise ConfigError(f"Source latent shape {z0.shape} does not match mixture shape {mixture.shape}")
        spec = replace(self.scenario, shape=z0.shape)
        return Scenario(spec=spec, z0_source=z0, denoiser=mixture, region=spec.region())


def _reject_unknown(table: Mapping[str, Any], allowed, prefix: str) -> None:
    for key in table:
        if key not in allowed:
            dotted = f"{prefix}.{key}" if prefix else key
            raise ConfigError(f"Unknown configuration key '{dotted}'")


def _table(data: Mapping[str, Any], name: str) -> Mapping[str, Any]:
    value = data.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"'{name}' must be a table")
    return value


def _typed(table: Mapping[str, Any], key: str, kind, default, prefix: str):
    if key not in table:
        return default
    value = table[key]
    dotted = f"{prefix}.{key}"
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not bool and isinstance(value, bool):
        raise ConfigError(f"'{dotted}' must be {kind.__name__}, got a boolean")
    if not isinstance(value, kind):
        raise ConfigError(f"'{dotted}' must be {kind.__name__}, got {type(value).__name__}")
    return value


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else base / path


def _parse_conditions(raw: Any, base: Path) -> Dict[str, Tuple[ComponentRef, ...]]:
    if not isinstance(raw, dict):
        raise ConfigError("'scenario.conditions' must be a table")
    conditions = {}
    for cond, table in raw.items():
        prefix = f"scenario.conditions.{cond}"
        if not isinstance(table, dict):
            raise ConfigError(f"'{prefix}' must be a table")
        _reject_unknown(table, CONDITION_KEYS, prefix)
        entries = table.get("components")
        if not isinstance(entries, list) or not entries:
            raise ConfigError(f"'{prefix}.components' must be a non-empty array of tables")
        refs: List[ComponentRef] = []
        for i, entry in enumerate(entries):
            item = f"{prefix}.components[{i}]"
            if not isinstance(entry, dict):
                raise ConfigError(f"'{item}' must be a table")
            _reject_unknown(entry, COMPONENT_KEYS, item)
            if "mean" not in entry:
                raise ConfigError(f"'{item}.mean' is required")
            refs.append(
                ComponentRef(
                    weight=_typed(entry, "weight", float, 1.0, item),
                    variance=_typed(entry, "variance", float, 0.05, item),
                    mean=_resolve(base, _typed(entry, "mean", str, "", item)),
                )
            )
        conditions[cond] = tuple(refs)
    for required in (SOURCE, TARGET):
        if required not in conditions:
            raise ConfigError(f"'scenario.conditions.{required}' is required")
    return conditions


def parse_config(data: Mapping[str, Any], base: Path = Path(".")) -> RunConfig:
    """Validate a decoded TOML document and build the RunConfig."""
    _reject_unknown(data, SCHEMA, "")
    for name, keys in SCHEMA.items():
        _reject_unknown(_table(data, name), keys, name)
    sampler, fusion, scenario, output = (_table(data, name) for name in SCHEMA)

    try:
        kind = _typed(sampler, "kind", str, "ddim", "sampler")
        fusion_config = FusionConfig(
            sampler=kind,
            steps=_typed(sampler, "steps", int, None, "sampler"),
            seed=_typed(sampler, "seed", int, 0, "sampler"),
            beta_start=_typed(sampler, "beta_start", float, FusionConfig.beta_start, "sampler"),
            beta_end=_typed(sampler, "beta_end", float, FusionConfig.beta_end, "sampler"),
            num_train_steps=_typed(sampler, "num_train_steps", int, FusionConfig.num_train_steps, "sampler"),
            rf_shift=_typed(sampler, "rf_shift", float, 1.0, "sampler"),
            mode=_typed(fusion, "mode", str, "inversion", "fusion"),
            alpha_mix=_typed(fusion, "alpha_mix", float, 0.5, "fusion"),
            sharpen=SharpenParams(
                gamma=_typed(fusion, "gamma", float, 100.0, "fusion"),
                lam=_typed(fusion, "lambda", float, 0.08, "fusion"),
            ),
            block_size=_typed(fusion, "block_size", int, 4, "fusion"),
            alpha_init=_typed(fusion, "alpha_init", float, 0.7, "fusion"),
            sharpen_maps=_typed(fusion, "sharpen", bool, True, "fusion"),
        )
        mask = _typed(scenario, "mask", list, [4, 4, 12, 12], "scenario")
        if len(mask) != 4 or not all(isinstance(v, int) and not isinstance(v, bool) for v in mask):
            raise ConfigError(f"'scenario.mask' must be four integers, got {mask}")
        spec = ScenarioSpec(
            shape=Shape(
                _typed(scenario, "channels", int, 4, "scenario"),
                _typed(scenario, "height", int, 16, "scenario"),
                _typed(scenario, "width", int, 16, "scenario"),
            ),
            mask=tuple(mask),
            seed=_typed(scenario, "seed", int, 7, "scenario"),
            components=_typed(scenario, "components", int, 1, "scenario"),
            background_scale=_typed(scenario, "background_scale", float, 1.0, "scenario"),
            edit_scale=_typed(scenario, "edit_scale", float, 1.0, "scenario"),
            variance=_typed(scenario, "variance", float, 0.05, "scenario"),
            background_drift=_typed(scenario, "background_drift", float, 0.0, "scenario"),
        )
    except ConfigError:
        raise
    except (LatentEditError, ValueError) as e:
        raise ConfigError(f"Invalid configuration: {e}") from e

    source_latent = _typed(scenario, "source_latent", str, None, "scenario")
    conditions = None
    if "conditions" in scenario:
        conditions = _parse_conditions(scenario["conditions"], base)

    log_level = _typed(output, "log_level", str, "INFO", "output").upper()
    if log_level not in LOG_LEVELS:
        raise ConfigError(f"'output.log_level' must be one of {LOG_LEVELS}, got {log_level}")
    output_config = OutputConfig(
        directory=_resolve(base, _typed(output, "directory", str, "out", "output")),
        export_maps=_typed(output, "export_maps", bool, False, "output"),
        export_trajectory=_typed(output, "export_trajectory", bool, False, "output"),
        plot=_typed(output, "plot", bool, False, "output"),
        log_level=log_level,
    )
    return RunConfig(
        fusion=fusion_config,
        scenario=spec,
        output=output_config,
        source_latent=_resolve(base, source_latent) if source_latent else None,
        conditions=conditions,
    )


def load_config(config_path) -> RunConfig:
    """Load and validate a TOML run configuration; relative paths resolve against its directory."""
    path = Path(config_path)
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid TOML in {path}: {e}") from e
    config = parse_config(data, base=path.resolve().parent)
    log.info(f"Loaded configuration from {path}")
    return replace(config, path=path)
