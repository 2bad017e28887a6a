"""Tabular and JSON summaries of edit runs."""
from __future__ import annotations

import json
import math
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional

import pandas as pd

from latent_edit.latent_io import atomic_write_bytes
from latent_edit.metrics import MetricReport
from latent_edit.pipeline import EditReport
from latent_edit.scenario import LocalizedScore

STEP_COLUMNS = ["index", "noise_level", "s_mean", "s_min", "s_max", "s_var", "mix_mean", "mix_var"]


def clean_for_json(value: Any) -> Any:
    """Normalize report values for JSON: infinite floats become "inf", NaN becomes None."""
    if value is None or isinstance(value, (str, bool)):
        return value
    if isinstance(value, float):
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, int):
        return value
    if isinstance(value, dict):
        return {str(k): clean_for_json(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean_for_json(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "item"):
        try:
            return clean_for_json(value.item())
        except Exception:
            pass
    return str(value)


def build_step_frame(report: EditReport) -> pd.DataFrame:
    """One row per denoising step, ordered from the noisiest level down to 0."""
    if not report.steps:
        return pd.DataFrame(columns=STEP_COLUMNS)
    return pd.DataFrame([asdict(stats) for stats in report.steps], columns=STEP_COLUMNS)


def build_edit_record(
    report: EditReport,
    metrics: Optional[MetricReport] = None,
    score: Optional[LocalizedScore] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        "mode": report.mode,
        "nfe_inversion": report.nfe_inversion,
        "nfe_denoise": report.nfe_denoise,
        "nfe_total": report.nfe_total,
        "steps": [asdict(stats) for stats in report.steps],
    }
    if metrics is not None:
        record["metrics"] = metrics.as_record()
    if score is not None:
        record["localized"] = asdict(score)
    if extra:
        record.update(extra)
    return clean_for_json(record)


def write_json_report(record: Dict[str, Any], path) -> Path:
    text = json.dumps(clean_for_json(record), indent=2, sort_keys=True) + "\n"
    return atomic_write_bytes(path, text.encode("utf-8"))


__all__ = ["clean_for_json", "build_step_frame", "build_edit_record", "write_json_report"]
