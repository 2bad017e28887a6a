"""Plots of similarity traces and sweep curves (PNG, Agg backend)."""

import re
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402


def _sanitize(text: str) -> str:
    """Filesystem-safe lowercase name; runs of other characters collapse to one underscore."""
    s = re.sub(r"[^0-9A-Za-z.]+", "_", text or "")
    s = re.sub(r"_+", "_", s).strip("_")
    return s.lower() or "na"


def plot_similarity_trace(steps: pd.DataFrame, output_dir: Path, label: str = "edit") -> Optional[Path]:
    """Mean and min/max band of S, plus the mean of S_mix, against noise level."""
    if steps.empty:
        return None
    output_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(8, 4))
    x = steps["noise_level"]
    ax.fill_between(x, steps["s_min"], steps["s_max"], alpha=0.2, label="S min/max")
    ax.plot(x, steps["s_mean"], marker="o", label="S mean")
    ax.plot(x, steps["mix_mean"], linestyle="--", label="S_mix mean")
    ax.set_xlabel("noise level")
    ax.set_ylabel("similarity")
    ax.invert_xaxis()
    ax.set_title(f"Similarity trace ({label})")
    ax.legend()
    fig.tight_layout()
    out_path = output_dir / f"similarity_trace_{_sanitize(label)}.png"
    fig.savefig(str(out_path))
    plt.close(fig)
    return out_path


def plot_sweep_curve(
    summary: pd.DataFrame,
    output_dir: Path,
    x: str = "block_size",
    y: str = "background_psnr",
) -> Optional[Path]:
    """Seed-averaged metric ``y`` against sweep axis ``x``."""
    if summary.empty or x not in summary.columns or y not in summary.columns:
        return None
    output_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(summary[x], summary[y], marker="o")
    if x == "block_size":
        ax.set_xscale("log", base=2)
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.set_title(f"{y} vs {x}")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out_path = output_dir / f"sweep_{_sanitize(y)}_vs_{_sanitize(x)}.png"
    fig.savefig(str(out_path))
    plt.close(fig)
    return out_path
