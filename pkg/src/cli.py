#!/usr/bin/env python3
"""
UltraSeg command-line interface

Usage:
    # Generate a synthetic dataset
    ultraseg synth --profile bright-wide --count 100 --out runs/synth

    # Train UltraUNet on one profile, three trials
    ultraseg train --config run.json --seed 0 --out runs/train

    # Evaluate saved weights with SVG overlays and a Dice-vs-FPS scatter
    ultraseg eval --weights runs/train/train_ultraunet_default_trial0.uunw --svg 4 --scatter

    # Parameter/FLOP accounting, FPS and architecture calibration
    ultraseg bench --calibrate --out runs/bench

    # Train the augmentation denoiser
    ultraseg denoiser --count 100 --epochs 10 --out runs/denoiser

    # Augmentation ablation (8 cells) and cross-domain evaluation
    ultraseg ablate --profile bright-wide --test-profile dim-narrow --out runs/ablate
    ultraseg crossdomain --profile bright-wide --hist-match both --out runs/xd

Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.
All diagnostics go to stderr.
"""
import argparse
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import ValidationError

from .config.constants import BENCH_INPUT_SHAPE, FPS_DURATION_SECONDS
from .config.run_config import ConfigError, RunConfig, load_run_config
from .config.settings import settings
from .models.architectures import build_ref_unet, build_ultraunet
from .models.model_graph import GraphValidationError
from .models.results import CostReport, FpsReport
from .services.benchmark import calibrate_ultraunet, measure_fps, speed_ratio
from .services.experiments import ExperimentRunner
from .services.synth_generator import gen_dataset
from .services.trainer import TrainingAbortedError
from .utils.cost_counter import count_flops
from .utils.persistence import (
    ImageFormatError,
    WeightsFormatError,
    write_contour,
    write_json,
    write_mask,
    write_pgm,
)

logger = logging.getLogger("ultraseg")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def configure_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stderr)],
        force=True,
    )


def _say(message: str) -> None:
    print(message, file=sys.stderr)


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """
    Load --config (or defaults) and apply command-line overrides

    Raises:
        ConfigError: If the overridden config does not validate
    """
    config = load_run_config(args.config) if args.config else RunConfig()
    payload: Dict[str, Any] = config.model_dump(mode="json")

    if args.seed is not None:
        payload["data"]["seed"] = args.seed
        payload["train"]["seed"] = args.seed
        payload["augmentation"]["seed"] = args.seed
        payload["denoiser_training"]["seed"] = args.seed
    if args.out:
        payload["output_dir"] = args.out
    if args.profile:
        payload["data"]["train_profile"] = args.profile
    if args.trials is not None:
        payload["train"]["trials"] = args.trials
    if getattr(args, "count", None) is not None:
        payload["data"]["count"] = args.count
    if getattr(args, "image_size", None) is not None and args.command != "bench":
        payload["data"]["image_size"] = args.image_size
    if getattr(args, "epochs", None) is not None:
        if args.command == "denoiser":
            payload["denoiser_training"]["epochs"] = args.epochs
        else:
            payload["train"]["epochs_max"] = args.epochs
            payload["train"]["patience"] = min(payload["train"]["patience"], args.epochs)
    if getattr(args, "denoiser", None):
        payload["denoiser_weights"] = args.denoiser
    if getattr(args, "hist_match", None):
        payload["data"]["hist_match"] = args.hist_match

    try:
        return RunConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration after overrides: {e}")


def _runner(args: argparse.Namespace) -> ExperimentRunner:
    config = build_run_config(args)
    runner = ExperimentRunner(config)
    runner.profile(config.data.train_profile)
    return runner


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    """Write images/NNNN.pgm, masks/NNNN.pgm, contours/NNNN.csv and split.json"""
    runner = _runner(args)
    data = runner.config.data
    out = runner.run_dir
    dataset = gen_dataset(runner.profile(data.train_profile), data.count, data.seed, data.image_size)
    for sub in ("images", "masks", "contours"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for i, sample in enumerate(dataset.samples):
        write_pgm(out / "images" / f"{i:04d}.pgm", sample.image)
        write_mask(out / "masks" / f"{i:04d}.pgm", sample.mask)
        write_contour(out / "contours" / f"{i:04d}.csv", sample.contour)
    write_json(out / "split.json", dataset.split.to_dict())
    runner.write_snapshot()
    _say(f"✓ Wrote {len(dataset.samples)} '{dataset.profile}' samples to {out}")
    return EXIT_OK


def cmd_denoiser(args: argparse.Namespace) -> int:
    runner = _runner(args)
    path = runner.train_denoiser_only()
    _say(f"✓ Denoiser weights saved to {path}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    runner = _runner(args)
    rows = runner.run_single_domain()
    _say(f"✓ {len(rows)} result rows in {runner.run_dir / 'results.csv'}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    runner = _runner(args)
    rows = runner.run_eval(
        [Path(p) for p in args.weights],
        profile=args.test_profile,
        svg_frames=args.svg,
        scatter=args.scatter,
        fps_duration=args.duration,
    )
    for row in rows:
        msd = "undefined" if row.msd is None else f"{row.msd:.3f} px"
        _say(f"  {row.model} on {row.test_profile} (hist {'on' if row.hist_match else 'off'}): "
             f"Dice {row.dice:.4f}, MSD {msd}")
    _say(f"✓ Evaluation written to {runner.run_dir}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    runner = _runner(args)
    rows = runner.run_ablation(test_profile=args.test_profile)
    _say(f"✓ Ablation finished: {len(rows)} rows in {runner.run_dir / 'results.csv'}")
    return EXIT_OK


def cmd_crossdomain(args: argparse.Namespace) -> int:
    runner = _runner(args)
    rows = runner.run_crossdomain()
    _say(f"✓ Cross-domain finished: {len(rows)} rows in {runner.run_dir / 'results.csv'}")
    return EXIT_OK


def _cost_csv(report: CostReport) -> str:
    buffer = io.StringIO()
    fields = ["name", "kind", "params", "macs", "additive", "flops_mac", "flops_2mac", "output_shape"]
    writer = csv.DictWriter(buffer, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for layer in report.layers:
        writer.writerow(
            {
                "name": layer.name,
                "kind": layer.kind,
                "params": layer.params,
                "macs": layer.macs,
                "additive": layer.additive,
                "flops_mac": layer.flops("mac"),
                "flops_2mac": layer.flops("2mac"),
                "output_shape": "x".join(str(d) for d in layer.output_shape),
            }
        )
    return buffer.getvalue()


def cmd_bench(args: argparse.Namespace) -> int:
    """Cost accounting at 1x1x224x224, FPS runs and optional calibration table"""
    config = build_run_config(args)
    out = Path(config.output_dir or Path(settings.runs_dir) / "bench")
    out.mkdir(parents=True, exist_ok=True)
    size = BENCH_INPUT_SHAPE[-1]
    fps_size = size if args.image_size is None else args.image_size

    timed = args.fps_runs > 0
    if fps_size <= 0:
        raise ConfigError(f"--image-size must be positive, got {fps_size}")
    try:
        graphs = {
            "ultraunet": build_ultraunet(config.ultraunet, seed=config.train.seed, initialize=timed, image_size=fps_size),
            "ref_unet": build_ref_unet(config.ref_unet, seed=config.train.seed, initialize=timed, image_size=fps_size),
        }
    except GraphValidationError as e:
        raise ConfigError(f"--image-size {fps_size}: {e}")
    fps_runs: Dict[str, List[FpsReport]] = {}
    for model, graph in graphs.items():
        report = count_flops(graph, BENCH_INPUT_SHAPE)
        write_json(out / f"cost_{model}.json", {**report.model_dump(mode="json"), "totals": report.totals()})
        (out / f"cost_{model}.csv").write_text(_cost_csv(report), encoding="utf-8")
        _say(
            f"✓ {model}: {report.params:,} params, {report.gflops('mac'):.3f} GFLOPs (MAC), "
            f"{report.gflops('2mac'):.3f} GFLOPs (2 x MAC)"
        )
        if timed:
            runs = [
                measure_fps(graph, duration=args.duration, input_shape=(1, 1, fps_size, fps_size), seed=run)
                for run in range(args.fps_runs)
            ]
            fps_runs[model] = runs

    if timed:
        # best of the runs; the spread between runs shows repeatability
        best = {m: max(runs, key=lambda r: r.fps) for m, runs in fps_runs.items()}
        ratio = speed_ratio(best["ultraunet"], best["ref_unet"])
        payload = {
            "input_shape": [1, 1, fps_size, fps_size],
            "runs": {m: [r.model_dump() for r in runs] for m, runs in fps_runs.items()},
            "best_fps": {m: r.fps for m, r in best.items()},
            "spread_fps": {m: max(r.fps for r in runs) - min(r.fps for r in runs) for m, runs in fps_runs.items()},
            "speed_ratio": ratio,
        }
        write_json(out / "fps.json", payload)
        _say(f"✓ FPS ultraunet {best['ultraunet'].fps:.1f}, ref_unet {best['ref_unet'].fps:.1f}, ratio {ratio:.2f}")

    if args.calibrate:
        rows = calibrate_ultraunet(default=config.ultraunet)
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=list(rows[0].model_dump()), lineterminator="\n")
        writer.writeheader()
        writer.writerows(r.model_dump() for r in rows)
        (out / "calibration.csv").write_text(buffer.getvalue(), encoding="utf-8")
        _say(f"✓ Calibration table with {len(rows)} layouts written to {out / 'calibration.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="RunConfig JSON file")
    parser.add_argument("--seed", type=int, help="Seed for data, initialization and augmentation")
    parser.add_argument("--out", help="Run directory")
    parser.add_argument("--profile", help="Training profile (default: bright-wide)")
    parser.add_argument("--trials", type=int, help="Independent training trials")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ultraseg",
        description="Lightweight ultrasound tongue-contour segmentation experiments",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", help="Command to run")

    synth = sub.add_parser("synth", help="Generate a synthetic dataset")
    _common(synth)
    synth.add_argument("--count", type=int, help="Number of samples")
    synth.add_argument("--image-size", type=int, help="Image side length")

    den = sub.add_parser("denoiser", help="Train the augmentation denoiser")
    _common(den)
    den.add_argument("--count", type=int, help="Number of clean synthetic images to generate")
    den.add_argument("--epochs", type=int, help="Training epochs (default: 10)")
    den.add_argument("--image-size", type=int, help="Image side length")

    train = sub.add_parser("train", help="Single-domain training")
    _common(train)
    train.add_argument("--epochs", type=int, help="Maximum epochs")
    train.add_argument("--count", type=int, help="Dataset size")
    train.add_argument("--image-size", type=int, help="Image side length")
    train.add_argument("--denoiser", help="Denoiser weights for denoising augmentation")

    ev = sub.add_parser("eval", help="Evaluate saved weights")
    _common(ev)
    ev.add_argument("--weights", nargs="+", required=True, help="Weights files, one per trial")
    ev.add_argument("--test-profile", help="Profile to test on (default: the training profile)")
    ev.add_argument("--count", type=int, help="Dataset size")
    ev.add_argument("--image-size", type=int, help="Image side length")
    ev.add_argument("--svg", type=int, default=0, help="Write overlays for the first N test frames")
    ev.add_argument("--scatter", action="store_true", help="Write a Dice-vs-FPS scatter CSV")
    ev.add_argument("--duration", type=float, default=FPS_DURATION_SECONDS, help="FPS seconds for --scatter")
    ev.add_argument("--hist-match", choices=["on", "off", "both"], help="Histogram-match test frames")

    bench = sub.add_parser("bench", help="Parameter, FLOP and FPS benchmarks")
    _common(bench)
    bench.add_argument("--duration", type=float, default=FPS_DURATION_SECONDS, help="Seconds per FPS run")
    bench.add_argument("--fps-runs", type=int, default=1, help="FPS runs per model (0 skips timing)")
    bench.add_argument("--calibrate", action="store_true", help="Write the layout calibration table")
    bench.add_argument("--image-size", type=int, help="FPS input side (accounting always uses 224)")

    ablate = sub.add_parser("ablate", help="PSF / speckle / denoise augmentation ablation")
    _common(ablate)
    ablate.add_argument("--test-profile", help="Profile to test on (default: the training profile)")
    ablate.add_argument("--epochs", type=int, help="Maximum epochs")
    ablate.add_argument("--count", type=int, help="Dataset size")
    ablate.add_argument("--image-size", type=int, help="Image side length")
    ablate.add_argument("--denoiser", help="Denoiser weights; trained on the fly when omitted")

    xd = sub.add_parser("crossdomain", help="Train on one profile, test on the others")
    _common(xd)
    xd.add_argument("--hist-match", choices=["on", "off", "both"], help="Histogram-match test frames")
    xd.add_argument("--epochs", type=int, help="Maximum epochs")
    xd.add_argument("--count", type=int, help="Dataset size")
    xd.add_argument("--image-size", type=int, help="Image side length")
    xd.add_argument("--denoiser", help="Denoiser weights for denoising augmentation")
    return parser


HANDLERS = {
    "synth": cmd_synth,
    "denoiser": cmd_denoiser,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
    "crossdomain": cmd_crossdomain,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG

    configure_logging(args.verbose)
    try:
        return HANDLERS[args.command](args)
    except (ConfigError, ValidationError, FileNotFoundError) as e:
        _say(f"✗ Configuration error: {e}")
        return EXIT_CONFIG
    except (ImageFormatError, WeightsFormatError) as e:
        _say(f"✗ Input error: {e}")
        return EXIT_CONFIG
    except TrainingAbortedError as e:
        logger.error(f"Training aborted: {e}", exc_info=True)
        _say(f"✗ Training aborted: {e}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        _say(f"✗ {args.command} failed: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
