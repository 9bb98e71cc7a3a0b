"""
Training Service
Mini-batch training with polynomial learning-rate decay, early stopping on
validation loss, per-split evaluation and multi-trial aggregation
"""
import logging
import time
from typing import Callable, List, Optional, Tuple

import numpy as np

from ..autodiff import ops
from ..autodiff.losses import combined_loss
from ..autodiff.tape import Tape, backward
from ..config.constants import EARLY_STOP_MIN_DELTA
from ..models.imaging import DatasetSplit, empty_contour
from ..models.model_graph import ModelGraph
from ..models.results import FrameMetrics, SplitEvaluation, TrialResult, TrialsReport
from ..models.training import LossConfig, TrainConfig
from ..utils.image_ops import ReferenceHistogram, histogram_match
from ..utils.metrics import evaluate
from ..utils.schedule import lr_factor
from .augmenter import Augmenter
from .optimizer import AdamOptimizer

logger = logging.getLogger(__name__)


class TrainingAbortedError(RuntimeError):
    """Raised when the training loss becomes NaN or infinite"""
    pass


class EarlyStopping:
    """
    Tracks the best validation loss

    An epoch improves only when its loss is lower than the best so far by
    more than min_delta. Training stops after ``patience`` consecutive
    epochs without improvement.
    """

    def __init__(self, patience: int, min_delta: float = EARLY_STOP_MIN_DELTA):
        self.patience = patience
        self.min_delta = min_delta
        self.best = float("inf")
        self.best_epoch = -1
        self.bad_epochs = 0
        self.epoch = -1

    def update(self, val_loss: float) -> bool:
        """Record one epoch; returns True when it is the new best."""
        self.epoch += 1
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.best_epoch = self.epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def _batch_tensors(split: DatasetSplit, idx: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return split.images[idx][:, None], split.masks[idx][:, None]


class Trainer:
    """
    Trains one segmentation graph

    The training step is single-threaded; only batch augmentation may fan
    out to worker threads, with results kept in input order.
    """

    def __init__(
        self,
        graph: ModelGraph,
        loss_cfg: Optional[LossConfig] = None,
        train_cfg: Optional[TrainConfig] = None,
        augmenter: Optional[Augmenter] = None,
    ):
        self.graph = graph
        self.loss_cfg = loss_cfg or LossConfig()
        self.train_cfg = train_cfg or TrainConfig()
        self.augmenter = augmenter

    def _loss(self, images: np.ndarray, masks: np.ndarray, tape: Optional[Tape]):
        logits = self.graph.forward(images, tape=tape)
        return combined_loss(ops.sigmoid(logits), masks, self.loss_cfg)

    def validation_loss(self, split: DatasetSplit) -> float:
        """Sample-weighted mean combined loss, no augmentation and no tape."""
        total = 0.0
        for start in range(0, len(split), self.train_cfg.batch):
            idx = np.arange(start, min(start + self.train_cfg.batch, len(split)))
            images, masks = _batch_tensors(split, idx)
            total += float(self._loss(images, masks, tape=None).value) * len(idx)
        return total / len(split)

    def fit(self, train: DatasetSplit, val: DatasetSplit, seed: Optional[int] = None) -> TrialResult:
        """
        Train until early stopping or the epoch budget

        Args:
            train: Training split
            val: Validation split (never augmented)
            seed: Trial seed; defaults to the TrainConfig seed

        Returns:
            TrialResult with loss histories; the graph holds the best weights

        Raises:
            ValueError: If a split is empty
            TrainingAbortedError: If a batch loss is not finite
        """
        if len(train) == 0 or len(val) == 0:
            raise ValueError("fit needs non-empty training and validation splits")
        cfg = self.train_cfg
        seed = cfg.seed if seed is None else seed
        optimizer = AdamOptimizer(self.graph.parameters(), lr=cfg.lr0)
        stopper = EarlyStopping(cfg.patience)
        train_losses: List[float] = []
        val_losses: List[float] = []
        best_state = self.graph.state_dict()
        started = time.perf_counter()

        for epoch in range(cfg.epochs_max):
            optimizer.lr = cfg.lr0 * lr_factor(epoch, cfg.epochs_max, cfg.poly_power)
            rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
            order = rng.permutation(len(train))

            total = 0.0
            for b, start in enumerate(range(0, len(order), cfg.batch)):
                idx = order[start : start + cfg.batch]
                if self.augmenter is not None:
                    images, masks = self.augmenter.augment_batch(
                        train.images[idx],
                        train.masks[idx],
                        [train.contours[i] for i in idx] if train.contours else [empty_contour() for _ in idx],
                        [(seed, epoch, int(i)) for i in idx],
                    )
                    images, masks = images[:, None], masks[:, None]
                else:
                    images, masks = _batch_tensors(train, idx)

                tape = Tape()
                loss = self._loss(images, masks, tape)
                value = float(loss.value)
                if not np.isfinite(value):
                    raise TrainingAbortedError(
                        f"non-finite loss {value} at epoch {epoch} batch {b} (samples {idx.tolist()})"
                    )
                backward(tape, loss)
                optimizer.step()
                total += value * len(idx)

            train_losses.append(total / len(train))
            val_losses.append(self.validation_loss(val))
            if stopper.update(val_losses[-1]):
                best_state = self.graph.state_dict()
            logger.info(
                f"Epoch {epoch + 1}/{cfg.epochs_max}: train {train_losses[-1]:.4f}, "
                f"val {val_losses[-1]:.4f}, lr {optimizer.lr:.2e}"
            )
            if stopper.should_stop:
                logger.info(
                    f"Early stopping after epoch {epoch + 1}; best epoch {stopper.best_epoch + 1}"
                )
                break

        self.graph.load_state_dict(best_state)
        return TrialResult(
            seed=seed,
            train_losses=train_losses,
            val_losses=val_losses,
            best_epoch=stopper.best_epoch,
            epochs_run=len(val_losses),
            wall_seconds=time.perf_counter() - started,
        )


def evaluate_frames(
    graph: ModelGraph,
    split: DatasetSplit,
    hist_ref: Optional[ReferenceHistogram] = None,
) -> List[FrameMetrics]:
    """Per-frame Dice and MSD; frames are histogram matched first when a reference is given."""
    frames = []
    for i in range(len(split)):
        img = split.images[i]
        if hist_ref is not None:
            img = histogram_match(img, hist_ref)
        logits = graph.predict(img[None, None])[0, 0]
        frames.append(evaluate(logits, split.masks[i], split.contours[i]))
    return frames


def evaluate_split(
    graph: ModelGraph,
    split: DatasetSplit,
    hist_ref: Optional[ReferenceHistogram] = None,
) -> SplitEvaluation:
    return SplitEvaluation.from_frames(evaluate_frames(graph, split, hist_ref))


def train_trial(
    build_graph: Callable[[int], ModelGraph],
    train: DatasetSplit,
    val: DatasetSplit,
    trial_seed: int,
    loss_cfg: Optional[LossConfig] = None,
    train_cfg: Optional[TrainConfig] = None,
    augmenter: Optional[Augmenter] = None,
) -> Tuple[ModelGraph, TrialResult]:
    """Build a fresh graph from trial_seed and fit it."""
    graph = build_graph(trial_seed)
    result = Trainer(graph, loss_cfg, train_cfg, augmenter).fit(train, val, seed=trial_seed)
    return graph, result


def run_trials(
    build_graph: Callable[[int], ModelGraph],
    train: DatasetSplit,
    val: DatasetSplit,
    test: DatasetSplit,
    loss_cfg: Optional[LossConfig] = None,
    train_cfg: Optional[TrainConfig] = None,
    augmenter: Optional[Augmenter] = None,
    hist_ref: Optional[ReferenceHistogram] = None,
) -> TrialsReport:
    """
    Train ``train_cfg.trials`` independent models and aggregate test metrics

    Trial t uses seed ``train_cfg.seed + t`` for both initialization and
    batch order.

    Returns:
        TrialsReport with per-trial results, mean, sample std and best
    """
    train_cfg = train_cfg or TrainConfig()
    trials: List[TrialResult] = []
    for t in range(train_cfg.trials):
        trial_seed = train_cfg.seed + t
        logger.info(f"Trial {t + 1}/{train_cfg.trials} (seed {trial_seed})")
        graph, result = train_trial(build_graph, train, val, trial_seed, loss_cfg, train_cfg, augmenter)
        evaluation = evaluate_split(graph, test, hist_ref)
        trials.append(
            result.model_copy(
                update={
                    "test_dice": evaluation.dice_mean,
                    "test_msd": evaluation.msd_mean,
                    "undefined_msd_count": evaluation.undefined_msd_count,
                }
            )
        )
    report = TrialsReport.aggregate(trials)
    logger.info(
        f"Dice {report.dice.mean:.4f} +/- {report.dice.std:.4f} over {report.dice.n} trials"
    )
    return report
