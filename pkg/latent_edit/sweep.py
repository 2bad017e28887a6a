"""Hyperparameter sweeps over gamma, lambda, block size, step count and seed.

Every grid point is an independent edit run on a scenario drawn with the
point's seed. Rows come back as a pandas DataFrame with a fixed column order
and are sorted by (gamma, lambda, block_size, steps, seed).
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Sequence

import pandas as pd

from latent_edit.config import RunConfig
from latent_edit.latent_io import atomic_write_bytes
from latent_edit.metrics import compare
from latent_edit.pipeline import run_edit
from latent_edit.scenario import score_localized_edit
from latent_edit.similarity import SharpenParams

log = logging.getLogger(__name__)

CONFIG_COLUMNS = ["mode", "sampler", "steps", "seed", "alpha_mix", "gamma", "lambda", "block_size", "alpha_init"]
METRIC_COLUMNS = ["background_psnr", "psnr", "ssim", "mse", "edit_distance"]
NFE_COLUMNS = ["nfe_inversion", "nfe_denoise"]
SWEEP_COLUMNS = CONFIG_COLUMNS + METRIC_COLUMNS + NFE_COLUMNS
SORT_KEYS = ["gamma", "lambda", "block_size", "steps", "seed"]


@dataclass(frozen=True)
class SweepPoint:
    gamma: float
    lam: float
    block_size: int
    steps: int
    seed: int


@dataclass(frozen=True)
class SweepGrid:
    gammas: Sequence[float]
    lambdas: Sequence[float]
    block_sizes: Sequence[int]
    steps: Sequence[int]
    seeds: Sequence[int]

    def points(self) -> List[SweepPoint]:
        """Cartesian product in sort-key order (duplicates removed)."""
        axes = [sorted(set(axis)) for axis in (self.gammas, self.lambdas, self.block_sizes, self.steps, self.seeds)]
        for name, axis in zip(SORT_KEYS, axes):
            if not axis:
                raise ValueError(f"Sweep axis '{name}' is empty")
        return [SweepPoint(*combo) for combo in itertools.product(*axes)]

    @classmethod
    def around(cls, base: RunConfig, **axes) -> "SweepGrid":
        """Single-point axes from ``base``, overridden by any non-empty axis given."""
        fusion = base.fusion
        defaults = {
            "gammas": [fusion.sharpen.gamma],
            "lambdas": [fusion.sharpen.lam],
            "block_sizes": [fusion.block_size],
            "steps": [fusion.steps],
            "seeds": [base.scenario.seed],
        }
        for name, values in axes.items():
            if values:
                defaults[name] = list(values)
        return cls(**defaults)


def run_point(base: RunConfig, point: SweepPoint) -> Dict[str, Any]:
    """Run one grid point; the seed drives both the scenario and the run's noise."""
    run_config = replace(base, scenario=replace(base.scenario, seed=point.seed))
    run_config = run_config.with_fusion(
        sharpen=SharpenParams(gamma=point.gamma, lam=point.lam),
        block_size=point.block_size,
        steps=point.steps,
        seed=point.seed,
    )
    scenario = run_config.build_scenario()
    fusion = run_config.fusion
    report = run_edit(scenario.z0_source, scenario.denoiser, fusion)

    z0 = scenario.z0_source
    peak = float(z0.values.max() - z0.values.min()) or 1.0
    metrics = compare(report.edited, z0, peak)
    score = score_localized_edit(report.edited, scenario)
    return {
        "mode": fusion.mode,
        "sampler": fusion.sampler,
        "steps": point.steps,
        "seed": point.seed,
        "alpha_mix": fusion.alpha_mix,
        "gamma": point.gamma,
        "lambda": point.lam,
        "block_size": point.block_size,
        "alpha_init": fusion.alpha_init,
        "background_psnr": score.background_psnr,
        "psnr": metrics.psnr_db,
        "ssim": metrics.ssim if metrics.ssim is not None else math.nan,
        "mse": metrics.mse,
        "edit_distance": score.edit_distance,
        "nfe_inversion": report.nfe_inversion,
        "nfe_denoise": report.nfe_denoise,
    }


def run_sweep(base: RunConfig, grid: SweepGrid, workers: int = 1) -> pd.DataFrame:
    """Run every grid point, optionally in a process pool, and collect the table."""
    points = grid.points()
    log.info(f"Running sweep: {len(points)} grid points, workers={workers}")
    task = partial(run_point, base)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(task, points))
    else:
        rows = [task(point) for point in points]

    frame = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    frame = frame.sort_values(SORT_KEYS, kind="mergesort").reset_index(drop=True)
    log.info(f"Sweep finished: {len(frame)} rows")
    return frame


def write_sweep_csv(frame: pd.DataFrame, path) -> Path:
    """Atomically write the sweep table; infinite PSNR is written as ``inf``."""
    text = frame.to_csv(index=False, na_rep="nan", lineterminator="\n")
    path = atomic_write_bytes(path, text.encode("utf-8"))
    log.info(f"Wrote sweep table to {path}")
    return path


def summarize_by(frame: pd.DataFrame, column: str = "block_size") -> pd.DataFrame:
    """Seed-averaged metrics per value of ``column``."""
    metrics = ["background_psnr", "psnr", "edit_distance"]
    return frame.groupby(column, sort=True)[metrics].mean().reset_index()
