"""Command-line interface: invert, edit, edit-invfree, metrics, export, sweep."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from latent_edit.config import LOG_LEVELS, RunConfig, load_config
from latent_edit.errors import ConfigError, LatentEditError, LatentFileError
from latent_edit.latent import LatentGrid
from latent_edit.latent_io import (
    MAGIC,
    export_latent_pgm,
    export_map_pgm,
    read_latent,
    read_pgm,
    write_latent,
)
from latent_edit.metrics import SSIM_WINDOW, compare
from latent_edit.pipeline import SAMPLERS, EditReport, run_edit
from latent_edit.scenario import Scenario, score_localized_edit
from latent_edit.schedulers import CountingDenoiser, invert_trajectory
from latent_edit.similarity import SimilarityMap
from latent_edit.sweep import SweepGrid, run_sweep, summarize_by, write_sweep_csv
from visualization.reporting import build_edit_record, build_step_frame, write_json_report

log = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_FILE = 3


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latent-edit",
        description="Adaptive latent fusion editing with analytic denoisers",
    )
    parser.add_argument("--log-level", choices=LOG_LEVELS, default=None, help="Logging level (default: config or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    run_opts = argparse.ArgumentParser(add_help=False)
    run_opts.add_argument("--config", type=Path, default=None, help="TOML run configuration")
    run_opts.add_argument("--output", type=Path, default=None, help="Output directory (overrides [output] directory)")
    run_opts.add_argument("--sampler", choices=SAMPLERS, default=None)
    run_opts.add_argument("--seed", type=int, default=None, help="Noise seed of the run")
    run_opts.add_argument("--source", type=Path, default=None, help="Source latent file replacing the scenario draw")
    step_opt = argparse.ArgumentParser(add_help=False)
    step_opt.add_argument("--steps", type=int, default=None)

    sub.add_parser("invert", parents=[run_opts, step_opt], help="Invert the source latent and write the trajectory")

    for name, help_text in (
        ("edit", "Edit with inversion and adaptive latent fusion"),
        ("edit-invfree", "Inversion-free edit against a forward-diffused reference"),
    ):
        p = sub.add_parser(name, parents=[run_opts, step_opt], help=help_text)
        p.add_argument("--export-maps", action="store_true", help="Write per-step similarity maps")
        p.add_argument("--export-trajectory", action="store_true", help="Write the reference chain")
        p.add_argument("--plot", action="store_true", help="Plot the similarity trace")

    p = sub.add_parser("metrics", help="MSE / PSNR / SSIM between two latent or PGM files")
    p.add_argument("first", type=Path)
    p.add_argument("second", type=Path)
    p.add_argument("--data-range", type=float, default=None, help="Peak value range (default: joint max - min, 255 for PGM)")

    p = sub.add_parser("export", help="Export a latent or similarity map to binary PGM")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--map", action="store_true", help="Input is a 1 x H x W similarity map in [0, 1]")
    p.add_argument("--raw", action="store_true", help="Map values are raw similarities in [-1, 1]")

    p = sub.add_parser("sweep", parents=[run_opts], help="Grid sweep emitting one CSV row per run")
    p.add_argument("--gammas", type=_float_list, default=None)
    p.add_argument("--lambdas", type=_float_list, default=None)
    p.add_argument("--block-sizes", type=_int_list, default=None)
    p.add_argument("--steps", type=_int_list, default=None, help="Step counts to sweep")
    p.add_argument("--seeds", type=_int_list, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--plot", action="store_true", help="Plot background PSNR against block size")
    return parser


def _load_run_config(args, steps: Optional[int] = None) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if args.log_level is None:
        logging.getLogger().setLevel(config.output.log_level)
    changes = {}
    if args.sampler is not None:
        changes["sampler"] = args.sampler
        if steps is None:
            changes["steps"] = None
    if steps is not None:
        changes["steps"] = steps
    if args.seed is not None:
        changes["seed"] = args.seed
    return config.with_fusion(**changes) if changes else config


def _output_dir(args, config: RunConfig) -> Path:
    directory = args.output or config.output.directory
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def _scenario(args, config: RunConfig) -> Scenario:
    scenario = config.build_scenario()
    if args.source is None:
        return scenario
    z0 = read_latent(args.source)
    if z0.shape != scenario.denoiser.shape:
        raise ConfigError(f"Source latent {z0.shape} does not match the scenario shape {scenario.denoiser.shape}")
    return Scenario(spec=scenario.spec, z0_source=z0, denoiser=scenario.denoiser, region=scenario.region)


def _cmd_invert(args) -> int:
    config = _load_run_config(args, args.steps)
    out = _output_dir(args, config)
    scenario = _scenario(args, config)
    sched = config.fusion.schedule()
    model = CountingDenoiser(scenario.denoiser.with_condition("source"))
    trajectory = invert_trajectory(scenario.z0_source, model, sched)
    for index, grid in enumerate(trajectory):
        write_latent(out / f"trajectory_{index:03d}.lted", grid)
    log.info(f"Wrote {len(trajectory)} trajectory latents to {out} (NFE={model.calls})")
    return EXIT_OK


def _write_maps(report: EditReport, out: Path) -> None:
    for stats, stack in zip(report.steps, report.maps):
        stem = f"step_{stats.index:03d}"
        write_latent(out / f"{stem}_s.lted", stack.weights.as_latent())
        export_map_pgm(stack.weights, out / f"{stem}_s.pgm")
        export_map_pgm(stack.mixed, out / f"{stem}_s_mix.pgm", raw=True)


def _cmd_edit(args, mode: str) -> int:
    config = _load_run_config(args, args.steps)
    export_maps = args.export_maps or config.output.export_maps
    export_trajectory = args.export_trajectory or config.output.export_trajectory
    plot = args.plot or config.output.plot
    config = config.with_fusion(mode=mode, keep_maps=export_maps)
    out = _output_dir(args, config)
    scenario = _scenario(args, config)

    report = run_edit(scenario.z0_source, scenario.denoiser, config.fusion)
    z0 = scenario.z0_source
    peak = float(z0.values.max() - z0.values.min()) or 1.0
    metrics = compare(report.edited, z0, peak)
    score = score_localized_edit(report.edited, scenario)

    write_latent(out / "source.lted", z0)
    write_latent(out / "edited.lted", report.edited)
    export_latent_pgm(report.edited, out / "edited.pgm")
    if export_maps:
        _write_maps(report, out)
    if export_trajectory and report.reference is not None:
        for index, grid in enumerate(report.reference):
            write_latent(out / f"reference_{index:03d}.lted", grid)
    record = build_edit_record(
        report,
        metrics,
        score,
        extra={"sampler": config.fusion.sampler, "num_steps": config.fusion.steps, "seed": config.fusion.seed},
    )
    write_json_report(record, out / "report.json")
    if plot:
        from visualization.plotting import plot_similarity_trace

        plot_similarity_trace(build_step_frame(report), out, label=mode)
    log.info(
        f"{mode}: NFE {report.nfe_inversion}+{report.nfe_denoise}, "
        f"background PSNR={score.background_psnr:.2f} dB, edit distance={score.edit_distance:.4f}; wrote {out}"
    )
    return EXIT_OK


def _read_any(path: Path) -> LatentGrid:
    try:
        with open(path, "rb") as f:
            head = f.read(len(MAGIC))
    except OSError as e:
        raise LatentFileError(f"Cannot read file: {e.strerror or e}", path) from e
    if head[:2] == b"P5":
        return read_pgm(path)
    return read_latent(path)


def _cmd_metrics(args) -> int:
    a, b = _read_any(args.first), _read_any(args.second)
    data_range = args.data_range
    if data_range is None:
        is_pgm = any(p.suffix.lower() == ".pgm" for p in (args.first, args.second))
        if is_pgm:
            data_range = 255.0
        else:
            low = min(a.values.min(), b.values.min())
            high = max(a.values.max(), b.values.max())
            data_range = float(high - low) or 1.0
    _, height, width = a.values.shape
    if height < SSIM_WINDOW or width < SSIM_WINDOW:
        log.warning(f"SSIM skipped: grid {height}x{width} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    report = compare(a, b, data_range)
    print(json.dumps(report.as_record(), sort_keys=True))
    return EXIT_OK


def _cmd_export(args) -> int:
    grid = _read_any(args.input)
    if args.map:
        if grid.values.shape[0] != 1:
            raise ConfigError(f"--map expects a 1 x H x W grid, got {grid.shape}")
        export_map_pgm(SimilarityMap(grid.values[0]), args.output, raw=args.raw)
    else:
        export_latent_pgm(grid, args.output)
    log.info(f"Exported {args.input} to {args.output}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    if args.source is not None or args.seed is not None:
        raise ConfigError("sweep takes --seeds; each seed drives both the scenario and the noise")
    config = _load_run_config(args)
    csv_target = None
    if args.output is not None and args.output.suffix.lower() == ".csv":
        csv_target = args.output
        args.output = args.output.parent
    out = _output_dir(args, config)
    grid = SweepGrid.around(
        config,
        gammas=args.gammas,
        lambdas=args.lambdas,
        block_sizes=args.block_sizes,
        steps=args.steps,
        seeds=args.seeds,
    )
    frame = run_sweep(config, grid, workers=max(1, args.workers))
    csv_path = write_sweep_csv(frame, csv_target or out / "sweep.csv")
    summary = summarize_by(frame, "block_size")
    print(summary.to_string(index=False))
    if args.plot or config.output.plot:
        from visualization.plotting import plot_sweep_curve

        plot_sweep_curve(summary, csv_path.parent)
    return EXIT_OK


def _init_logging(level: Optional[str]) -> None:
    logging.basicConfig(level=getattr(logging, level or "INFO"), format=LOG_FORMAT)
    if level:
        logging.getLogger().setLevel(level)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    _init_logging(args.log_level)

    handlers = {
        "invert": _cmd_invert,
        "edit": lambda a: _cmd_edit(a, "inversion"),
        "edit-invfree": lambda a: _cmd_edit(a, "inversion_free"),
        "metrics": _cmd_metrics,
        "export": _cmd_export,
        "sweep": _cmd_sweep,
    }
    try:
        return handlers[args.command](args)
    except LatentFileError as e:
        log.error(f"File error (code {e.code}): {e}", exc_info=log.isEnabledFor(logging.DEBUG))
        return EXIT_FILE
    except (LatentEditError, ValueError) as e:
        log.error(f"{args.command} failed: {e}", exc_info=log.isEnabledFor(logging.DEBUG))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
