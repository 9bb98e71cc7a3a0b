"""
Benchmark Service
Wall-clock throughput measurement, architecture calibration against the
published accounting, and Dice-vs-FPS plot data
"""
import logging
import statistics
import time
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from threadpoolctl import threadpool_limits

from ..config.constants import (
    BENCH_INPUT_SHAPE,
    FPS_DURATION_SECONDS,
    FPS_MIN_DURATION_SECONDS,
    FPS_WARMUP_FRAMES,
    ULTRAUNET_GFLOPS_TARGET,
    ULTRAUNET_PARAMS_TARGET,
)
from ..models.architectures import UltraUNetConfig, build_ultraunet
from ..models.model_graph import ModelGraph
from ..models.results import CalibrationRow, FpsReport, TrialSummary
from ..utils.cost_counter import count_flops, count_params

logger = logging.getLogger(__name__)

Model = Union[ModelGraph, Callable[[np.ndarray], Any]]


def _as_callable(model: Model) -> Tuple[str, Callable[[np.ndarray], Any]]:
    if isinstance(model, ModelGraph):
        return model.name, model.predict
    return getattr(model, "__name__", "callable"), model


def measure_fps(
    model: Model,
    duration: float = FPS_DURATION_SECONDS,
    warmup: int = FPS_WARMUP_FRAMES,
    input_shape: Tuple[int, int, int, int] = BENCH_INPUT_SHAPE,
    seed: int = 0,
    clock: Callable[[], float] = time.perf_counter,
    name: Optional[str] = None,
) -> FpsReport:
    """
    Run inference back to back on one fixed random input

    BLAS is pinned to a single thread for the whole measurement. Warmup
    frames are excluded; timing continues until at least ``duration``
    seconds have elapsed on the monotonic clock.

    Args:
        model: Graph (no-tape inference path) or any callable taking the input
        duration: Minimum measured seconds
        warmup: Frames run before timing starts
        input_shape: Input tensor shape
        seed: Seed of the random input
        clock: Monotonic clock in seconds
        name: Report name; defaults to the graph name

    Returns:
        FpsReport with fps = frames / elapsed and latency percentiles

    Raises:
        ValueError: If duration < 1 s or warmup < 10 frames

    Example:
        report = measure_fps(build_ultraunet(), duration=10)
        print(f"{report.fps:.1f} FPS")
    """
    if duration < FPS_MIN_DURATION_SECONDS:
        raise ValueError(f"duration must be at least {FPS_MIN_DURATION_SECONDS} s, got {duration}")
    if warmup < FPS_WARMUP_FRAMES:
        raise ValueError(f"warmup must be at least {FPS_WARMUP_FRAMES} frames, got {warmup}")

    model_name, run = _as_callable(model)
    x = np.random.default_rng(seed).random(input_shape).astype(np.float32)

    with threadpool_limits(limits=1):
        for _ in range(warmup):
            run(x)

        latencies: List[float] = []
        started = clock()
        elapsed = 0.0
        while elapsed < duration:
            t0 = clock()
            run(x)
            t1 = clock()
            latencies.append(t1 - t0)
            elapsed = t1 - started

    frames = len(latencies)
    ms = [1000.0 * t for t in latencies]
    p95 = statistics.quantiles(ms, n=100)[94] if len(ms) >= 20 else max(ms)
    report = FpsReport(
        model=name or model_name,
        frames=frames,
        elapsed_seconds=elapsed,
        fps=frames / elapsed,
        warmup_frames=warmup,
        latency_mean_ms=statistics.fmean(ms),
        latency_p50_ms=statistics.median(ms),
        latency_p95_ms=p95,
        threads=1,
    )
    logger.info(
        f"{report.model}: {report.fps:.1f} FPS over {frames} frames "
        f"(p50 {report.latency_p50_ms:.2f} ms, p95 {report.latency_p95_ms:.2f} ms)"
    )
    return report


def speed_ratio(fast: FpsReport, slow: FpsReport) -> float:
    """Throughput ratio fast.fps / slow.fps, informational only."""
    return fast.fps / slow.fps


def calibrate_ultraunet(
    encoder_options: Sequence[int] = (1, 2, 3),
    decoder_options: Sequence[int] = (1, 2, 3),
    image_size: int = BENCH_INPUT_SHAPE[-1],
    default: Optional[UltraUNetConfig] = None,
) -> List[CalibrationRow]:
    """
    Parameter and FLOP error of each convs-per-block layout against the published figures

    Uses shape-only graphs, so no weights are allocated.

    Returns:
        One row per (encoder_convs, decoder_convs), the shipped default marked
    """
    default = default or UltraUNetConfig()
    shape = (1, default.in_channels, image_size, image_size)
    rows = []
    for enc in encoder_options:
        for dec in decoder_options:
            cfg = default.model_copy(update={"encoder_convs": enc, "decoder_convs": dec})
            graph = build_ultraunet(cfg, initialize=False, image_size=image_size)
            report = count_flops(graph, shape)
            params = count_params(graph)
            g_mac, g_2mac = report.gflops("mac"), report.gflops("2mac")
            rows.append(
                CalibrationRow(
                    encoder_convs=enc,
                    decoder_convs=dec,
                    params=params,
                    params_error=(params - ULTRAUNET_PARAMS_TARGET) / ULTRAUNET_PARAMS_TARGET,
                    gflops_mac=g_mac,
                    gflops_2mac=g_2mac,
                    flops_error_mac=(g_mac - ULTRAUNET_GFLOPS_TARGET) / ULTRAUNET_GFLOPS_TARGET,
                    flops_error_2mac=(g_2mac - ULTRAUNET_GFLOPS_TARGET) / ULTRAUNET_GFLOPS_TARGET,
                    default=(enc == default.encoder_convs and dec == default.decoder_convs),
                )
            )
    return rows


def dice_fps_scatter(
    entries: Iterable[Tuple[str, FpsReport, TrialSummary, float]],
) -> List[Dict[str, Any]]:
    """
    Rows for a Dice-vs-FPS scatter: FPS on x, mean Dice on y with its std
    as error bar, GFLOPs as marker size

    Args:
        entries: (model, fps report, dice summary, gflops) per model
    """
    rows = []
    for model, fps, dice, gflops in entries:
        rows.append(
            {
                "model": model,
                "fps": round(fps.fps, 3),
                "dice_mean": dice.mean,
                "dice_std": dice.std,
                "gflops": round(gflops, 4),
            }
        )
    return rows
