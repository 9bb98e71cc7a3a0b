"""
Experiment Runner Service
Single-domain training, cross-domain evaluation and the augmentation
ablation, with every artifact written under one run directory
"""
import csv
import io
import itertools
import logging
import platform
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy
import skimage

from ..config.constants import BENCH_INPUT_SHAPE, FPS_DURATION_SECONDS
from ..config.run_config import ConfigError, HistMatchMode, ModelName, RunConfig
from ..config.settings import settings
from ..models.architectures import build_denoiser, build_ref_unet, build_ultraunet
from ..models.augmentation import AugPolicy
from ..models.domain import DomainProfile
from ..models.imaging import DatasetSplit, SynthDataset
from ..models.model_graph import ModelGraph
from ..models.results import CSV_FIELDS, ResultsRow, TrialSummary
from ..utils.cost_counter import count_flops
from ..utils.image_ops import ReferenceHistogram
from ..utils.metrics import largest_component, mask_to_points, predict_mask, skeletonize
from ..utils.persistence import WeightsFormatError, load_weights, read_weights_file, save_weights, write_json
from ..utils.svg_overlay import write_overlay
from .augmenter import Augmenter, train_denoiser
from .benchmark import dice_fps_scatter, measure_fps
from .synth_generator import PROFILES, gen_dataset, get_profile
from .trainer import evaluate_split, train_trial

logger = logging.getLogger(__name__)

BANNER = "=" * 80


def hist_modes(mode: HistMatchMode) -> List[bool]:
    """Histogram-matching settings to evaluate for a mode."""
    return {"on": [True], "off": [False], "both": [False, True]}[mode]


def environment_stamp() -> Dict[str, str]:
    return {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-image": skimage.__version__,
        "ultraseg_threads": str(settings.ultraseg_threads),
    }


def results_csv(rows: Sequence[ResultsRow]) -> str:
    """Render rows as CSV text with "\\n" line endings."""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row.to_csv_dict())
    return buffer.getvalue()


def summarize_rows(rows: Sequence[ResultsRow]) -> List[Dict[str, Any]]:
    """
    Aggregate rows per (model, augmentation, hist_match, train, test) cell

    Adds one "average-unseen" entry per (model, augmentation, hist_match,
    train profile) averaging the per-profile means over every test profile
    other than the training one.
    """
    groups: Dict[Tuple, List[ResultsRow]] = {}
    for row in rows:
        key = (row.model, row.augmentation, row.hist_match, row.train_profile, row.test_profile)
        groups.setdefault(key, []).append(row)

    summary = []
    unseen: Dict[Tuple, List[Dict[str, Any]]] = {}
    for key, members in groups.items():
        model, aug, hist, train_profile, test_profile = key
        entry = {
            "model": model,
            "augmentation": aug,
            "hist_match": "on" if hist else "off",
            "train_profile": train_profile,
            "test_profile": test_profile,
            "dice": TrialSummary.from_values([r.dice for r in members], higher_is_better=True).model_dump(),
            "msd": TrialSummary.from_values([r.msd for r in members], higher_is_better=False).model_dump(),
            "undefined_msd_count": sum(r.undefined_msd_count for r in members),
        }
        summary.append(entry)
        if test_profile != train_profile:
            unseen.setdefault((model, aug, hist, train_profile), []).append(entry)

    for (model, aug, hist, train_profile), entries in unseen.items():
        msd_means = [e["msd"]["mean"] for e in entries if e["msd"]["mean"] is not None]
        summary.append(
            {
                "model": model,
                "augmentation": aug,
                "hist_match": "on" if hist else "off",
                "train_profile": train_profile,
                "test_profile": "average-unseen",
                "dice_mean": float(np.mean([e["dice"]["mean"] for e in entries])),
                "msd_mean": float(np.mean(msd_means)) if msd_means else None,
                "profiles": sorted(e["test_profile"] for e in entries),
            }
        )
    return summary


class ExperimentRunner:
    """
    Orchestrates experiments for one RunConfig

    Datasets are generated once per profile and cached. All outputs go to
    ``run_dir``: config.json, environment.json, weights, results.csv,
    trials.json and summary.json.
    """

    def __init__(self, config: RunConfig, run_dir: Optional[Path] = None):
        self.config = config
        default_dir = Path(settings.runs_dir) / f"run-seed{config.data.seed}"
        self.run_dir = Path(run_dir or config.output_dir or default_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self._datasets: Dict[str, SynthDataset] = {}
        self._denoiser: Optional[ModelGraph] = None

    # ------------------------------------------------------------------
    # Inputs
    # ------------------------------------------------------------------

    def profile(self, name: str) -> DomainProfile:
        """
        Configured or shipped profile by name

        Raises:
            ConfigError: If no profile has that name
        """
        if name in self.config.profiles:
            return self.config.profiles[name]
        if name not in PROFILES:
            raise ConfigError(f"unknown profile '{name}', available: {self.known_profiles()}")
        return get_profile(name)

    def known_profiles(self) -> List[str]:
        return sorted(set(PROFILES) | set(self.config.profiles))

    def test_profiles(self, train_profile: str) -> List[str]:
        chosen = self.config.data.test_profiles or self.known_profiles()
        return [p for p in chosen if p != train_profile]

    def dataset(self, name: str) -> SynthDataset:
        if name not in self._datasets:
            data = self.config.data
            self._datasets[name] = gen_dataset(self.profile(name), data.count, data.seed, data.image_size)
        return self._datasets[name]

    def graph_builder(self, model: ModelName) -> Callable[[int], ModelGraph]:
        size = self.config.data.image_size
        if model == "ultraunet":
            return lambda seed: build_ultraunet(self.config.ultraunet, seed=seed, image_size=size)
        return lambda seed: build_ref_unet(self.config.ref_unet, seed=seed, image_size=size)

    def reference_histogram(self, train: DatasetSplit, profile: str) -> ReferenceHistogram:
        """Pooled training-split histogram, persisted next to the results."""
        ref = ReferenceHistogram.from_images(train.images)
        write_json(self.run_dir / f"reference_histogram_{profile}.json", ref.model_dump())
        return ref

    def denoiser(self, clean_images: np.ndarray) -> ModelGraph:
        """Load the configured denoiser weights, or train one on clean_images and save it."""
        if self._denoiser is not None:
            return self._denoiser
        size = self.config.data.image_size
        if self.config.denoiser_weights:
            graph = build_denoiser(self.config.denoiser, image_size=size)
            load_weights(graph, self.config.denoiser_weights)
        else:
            logger.info("No denoiser weights configured; training one on the training split")
            result = train_denoiser(list(clean_images), self.config.denoiser_training, self.config.denoiser)
            graph = result.graph
            save_weights(graph, self.run_dir / "denoiser.uunw")
        self._denoiser = graph
        return graph

    def augmenter(self, policy: AugPolicy, clean_images: np.ndarray) -> Augmenter:
        denoiser = self.denoiser(clean_images) if policy.effective_denoise > 0 else None
        return Augmenter(policy, denoiser=denoiser)

    # ------------------------------------------------------------------
    # Outputs
    # ------------------------------------------------------------------

    def write_snapshot(self) -> None:
        write_json(self.run_dir / "config.json", self.config.model_dump(mode="json"))
        write_json(self.run_dir / "environment.json", environment_stamp())

    def write_results(self, rows: Sequence[ResultsRow], trials: Sequence[Dict[str, Any]]) -> None:
        (self.run_dir / "results.csv").write_text(results_csv(rows), encoding="utf-8")
        write_json(self.run_dir / "trials.json", list(trials))
        write_json(self.run_dir / "summary.json", summarize_rows(rows))
        logger.info(f"Wrote {len(rows)} result rows to {self.run_dir / 'results.csv'}")

    # ------------------------------------------------------------------
    # Experiments
    # ------------------------------------------------------------------

    def _train_and_evaluate(
        self,
        experiment_id: str,
        train_profile: str,
        test_profiles: Sequence[str],
        policy: AugPolicy,
        modes: Sequence[bool],
        augmentation_label: str,
    ) -> Tuple[List[ResultsRow], List[Dict[str, Any]]]:
        cfg = self.config
        source = self.dataset(train_profile)
        train, val = source.subset("train"), source.subset("val")
        ref = self.reference_histogram(train, train_profile) if any(modes) else None
        tests = {
            p: (source if p == train_profile else self.dataset(p)).subset("test") for p in test_profiles
        }
        augmenter = self.augmenter(policy, train.images)

        rows: List[ResultsRow] = []
        trials: List[Dict[str, Any]] = []
        for model in cfg.models:
            for t in range(cfg.train.trials):
                trial_seed = cfg.train.seed + t
                logger.info(
                    f"[{experiment_id}] {model} trial {t + 1}/{cfg.train.trials} "
                    f"on {train_profile} ({augmentation_label})"
                )
                graph, result = train_trial(
                    self.graph_builder(model), train, val, trial_seed, cfg.loss, cfg.train, augmenter
                )
                save_weights(graph, self.run_dir / f"{experiment_id}_{model}_{augmentation_label}_trial{t}.uunw")
                for hist in modes:
                    for test_profile, split in tests.items():
                        evaluation = evaluate_split(graph, split, ref if hist else None)
                        rows.append(
                            ResultsRow(
                                experiment_id=experiment_id,
                                model=model,
                                augmentation=augmentation_label,
                                hist_match=hist,
                                train_profile=train_profile,
                                test_profile=test_profile,
                                trial_seed=trial_seed,
                                dice=evaluation.dice_mean,
                                msd=evaluation.msd_mean,
                                undefined_msd_count=evaluation.undefined_msd_count,
                                epochs_run=result.epochs_run,
                                wall_seconds=result.wall_seconds,
                            )
                        )
                trials.append(
                    {
                        "experiment_id": experiment_id,
                        "model": model,
                        "augmentation": augmentation_label,
                        "train_profile": train_profile,
                        **result.model_dump(),
                    }
                )
        return rows, trials

    def run_single_domain(self) -> List[ResultsRow]:
        """Train on the configured profile and test on its own held-out split."""
        cfg = self.config
        profile = cfg.data.train_profile
        logger.info(BANNER)
        logger.info(f"Single-domain training on '{profile}'")
        logger.info(BANNER)
        self.write_snapshot()
        rows, trials = self._train_and_evaluate(
            "train", profile, [profile], cfg.augmentation, hist_modes(cfg.data.hist_match), "default"
        )
        self.write_results(rows, trials)
        return rows

    def run_crossdomain(self, mode: Optional[HistMatchMode] = None) -> List[ResultsRow]:
        """Train on one profile and evaluate on every other one, per histogram-matching mode."""
        cfg = self.config
        profile = cfg.data.train_profile
        targets = self.test_profiles(profile)
        if not targets:
            raise ValueError(f"no unseen profiles to evaluate besides '{profile}'")
        mode = mode or cfg.data.hist_match
        logger.info(BANNER)
        logger.info(f"Cross-domain: train '{profile}', test {targets}, histogram matching {mode}")
        logger.info(BANNER)
        self.write_snapshot()
        rows, trials = self._train_and_evaluate(
            "crossdomain", profile, targets, cfg.augmentation, hist_modes(mode), "default"
        )
        self.write_results(rows, trials)
        return rows

    def run_ablation(self, test_profile: Optional[str] = None) -> List[ResultsRow]:
        """
        Eight {PSF, speckle, denoise} on/off cells with flip always on

        Histogram matching is off so only augmentation varies. With a
        test_profile the models trained on the configured profile are tested
        on it; otherwise on the training profile's own test split.
        """
        cfg = self.config
        profile = cfg.data.train_profile
        target = test_profile or profile
        self.profile(target)
        logger.info(BANNER)
        logger.info(f"Augmentation ablation: train '{profile}', test '{target}'")
        logger.info(BANNER)
        self.write_snapshot()

        rows: List[ResultsRow] = []
        trials: List[Dict[str, Any]] = []
        for step, (psf, spk, den) in enumerate(itertools.product([False, True], repeat=3), start=1):
            policy = cfg.augmentation.model_copy(
                update={"enable_flip": True, "enable_psf": psf, "enable_speckle": spk, "enable_denoise": den}
            )
            label = "psf={}_speckle={}_denoise={}".format(*("on" if f else "off" for f in (psf, spk, den)))
            logger.info(f"Step {step}/8: {label}")
            cell_rows, cell_trials = self._train_and_evaluate("ablate", profile, [target], policy, [False], label)
            rows.extend(cell_rows)
            trials.extend(cell_trials)
        self.write_results(rows, trials)
        return rows

    def train_denoiser_only(self) -> Path:
        """Train and save a denoiser on the configured profile's training split."""
        source = self.dataset(self.config.data.train_profile)
        self.write_snapshot()
        result = train_denoiser(
            list(source.subset("train").images), self.config.denoiser_training, self.config.denoiser
        )
        path = self.run_dir / "denoiser.uunw"
        save_weights(result.graph, path)
        write_json(
            self.run_dir / "denoiser.json",
            {
                "train_mse": result.train_mse,
                "val_mse": result.val_mse,
                "best_epoch": result.best_epoch,
                "identity_val_mse": result.identity_val_mse,
            },
        )
        return path

    def identify_weights(self, path: Path) -> Tuple[ModelName, ModelGraph]:
        """
        Build the configured model whose tensor names and shapes match a weights file

        Raises:
            WeightsFormatError: If no configured architecture fits
        """
        tensors = read_weights_file(path)
        stored = {name: value.shape for name, value in tensors.items()}
        size = self.config.data.image_size
        skeletons = {
            "ultraunet": build_ultraunet(self.config.ultraunet, initialize=False, image_size=size),
            "ref_unet": build_ref_unet(self.config.ref_unet, initialize=False, image_size=size),
        }
        for model, skeleton in skeletons.items():
            if skeleton.param_shapes() == stored:
                graph = self.graph_builder(model)(0)
                load_weights(graph, path)
                return model, graph
        raise WeightsFormatError(f"{path} matches neither the ultraunet nor the ref_unet configuration")

    def run_eval(
        self,
        weights: Sequence[Path],
        profile: Optional[str] = None,
        svg_frames: int = 0,
        scatter: bool = False,
        fps_duration: float = FPS_DURATION_SECONDS,
    ) -> List[ResultsRow]:
        """
        Evaluate saved weights on a profile's test split

        Each weights file counts as one trial of its model. Optionally writes
        SVG overlays of the first frames and a Dice-vs-FPS scatter CSV.
        """
        cfg = self.config
        target = profile or cfg.data.train_profile
        split = self.dataset(target).subset("test")
        ref = None
        if cfg.data.hist_match != "off":
            source = self.dataset(cfg.data.train_profile).subset("train")
            ref = self.reference_histogram(source, cfg.data.train_profile)
        self.write_snapshot()

        rows: List[ResultsRow] = []
        graphs: Dict[str, ModelGraph] = {}
        for index, path in enumerate(weights):
            model, graph = self.identify_weights(Path(path))
            graphs.setdefault(model, graph)
            for hist in hist_modes(cfg.data.hist_match):
                evaluation = evaluate_split(graph, split, ref if hist else None)
                rows.append(
                    ResultsRow(
                        experiment_id="eval",
                        model=model,
                        augmentation="default",
                        hist_match=hist,
                        train_profile=cfg.data.train_profile,
                        test_profile=target,
                        trial_seed=index,
                        dice=evaluation.dice_mean,
                        msd=evaluation.msd_mean,
                        undefined_msd_count=evaluation.undefined_msd_count,
                        epochs_run=0,
                    )
                )
            if svg_frames and index == 0:
                self.write_overlays(graph, split, min(svg_frames, len(split)), model)

        self.write_results(rows, [row.model_dump() for row in rows])
        if scatter:
            self.write_scatter(rows, graphs, fps_duration)
        return rows

    def write_overlays(self, graph: ModelGraph, split: DatasetSplit, count: int, label: str) -> None:
        out = self.run_dir / "svg"
        out.mkdir(exist_ok=True)
        for i in range(count):
            logits = graph.predict(split.images[i][None, None])[0, 0]
            points = mask_to_points(skeletonize(largest_component(predict_mask(logits))))
            title = f"{label} frame {i}"
            write_overlay(out / f"{label}_{i:04d}.svg", split.images[i], split.contours[i], points, title)
        logger.info(f"Wrote {count} overlays to {out}")

    def write_scatter(self, rows: Sequence[ResultsRow], graphs: Dict[str, ModelGraph], duration: float) -> None:
        """FPS, Dice mean/std and GFLOPs per evaluated model."""
        entries = []
        for model, graph in graphs.items():
            # unmatched rows unless histogram matching is the only mode
            matched = self.config.data.hist_match == "on"
            dice = TrialSummary.from_values([r.dice for r in rows if r.model == model and r.hist_match == matched])
            fps = measure_fps(graph, duration=duration)
            if model == "ultraunet":
                skeleton = build_ultraunet(self.config.ultraunet, initialize=False)
            else:
                skeleton = build_ref_unet(self.config.ref_unet, initialize=False)
            gflops = count_flops(skeleton, BENCH_INPUT_SHAPE).gflops("mac")
            entries.append((model, fps, dice, gflops))
        scatter_rows = dice_fps_scatter(entries)
        buffer = io.StringIO()
        fields = ["model", "fps", "dice_mean", "dice_std", "gflops"]
        writer = csv.DictWriter(buffer, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(scatter_rows)
        (self.run_dir / "scatter.csv").write_text(buffer.getvalue(), encoding="utf-8")
