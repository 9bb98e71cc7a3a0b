"""
Tests for the training service and result models

Covers:
- EarlyStopping bookkeeping with min_delta
- Frozen validation loss stops after patience + 1 epochs
- Best weights restored after early stopping
- Non-finite loss aborts naming epoch and batch
- Determinism of a seeded fit
- Multi-trial aggregation and split evaluation
- TrialResult / TrialSummary validation
"""
from unittest.mock import patch

import pytest
import numpy as np
from pydantic import ValidationError

# Import from src
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.models.architectures import UltraUNetConfig, build_ultraunet
from src.models.augmentation import AugPolicy
from src.models.imaging import DatasetSplit
from src.models.results import TrialResult, TrialSummary, TrialsReport
from src.models.training import TrainConfig
from src.services.augmenter import Augmenter
from src.services.trainer import (
    EarlyStopping,
    Trainer,
    TrainingAbortedError,
    evaluate_split,
    run_trials,
    train_trial,
)

SIZE = 8


def tiny_graph(seed: int = 0):
    cfg = UltraUNetConfig(
        base_channels=4,
        depth=2,
        se_encoder_stages=[2],
        se_decoder_stages=[1],
        gn_encoder_stages=[2],
        se_reduction=4,
        gn_groups=4,
    )
    return build_ultraunet(cfg, seed=seed, image_size=SIZE)


def tiny_split(count: int, seed: int = 0) -> DatasetSplit:
    rng = np.random.default_rng(seed)
    masks = np.zeros((count, SIZE, SIZE), dtype=bool)
    rows = rng.integers(2, SIZE - 2, count)
    contours = []
    for i, r in enumerate(rows):
        masks[i, r - 1:r + 2, 1:SIZE - 1] = True
        contours.append(np.column_stack([np.arange(1, SIZE - 1, dtype=np.float64), np.full(SIZE - 2, float(r))]))
    images = (0.2 + 0.6 * masks + 0.05 * rng.standard_normal(masks.shape)).clip(0, 1).astype(np.float32)
    return DatasetSplit(images=images, masks=masks, contours=contours)


class TestEarlyStopping:
    """Best-loss tracking"""

    def test_counts_bad_epochs(self):
        """Test improvement resets the counter and stalls increment it"""
        stopper = EarlyStopping(patience=2)

        assert stopper.update(1.0)
        assert not stopper.update(1.5)
        assert stopper.update(0.5)
        assert not stopper.update(0.5)
        assert not stopper.should_stop
        assert not stopper.update(0.6)

        assert stopper.should_stop
        assert stopper.best_epoch == 2

    def test_min_delta(self):
        """Test a gain smaller than min_delta does not count as improvement"""
        stopper = EarlyStopping(patience=5, min_delta=1e-3)
        stopper.update(1.0)

        assert not stopper.update(1.0 - 1e-4)
        assert stopper.best == 1.0


class TestFit:
    """Trainer.fit"""

    def test_frozen_validation_loss(self):
        """Test a constant validation loss stops after 11 epochs with best epoch 0"""
        trainer = Trainer(tiny_graph(), train_cfg=TrainConfig(epochs_max=50, patience=10, batch=4))

        with patch.object(Trainer, "validation_loss", return_value=1.0):
            result = trainer.fit(tiny_split(4), tiny_split(2, seed=1))

        assert result.epochs_run == 11
        assert result.best_epoch == 0
        assert len(result.train_losses) == 11

    def test_restores_best_weights(self):
        """Test the graph ends with the weights from the best validation epoch"""
        graph = tiny_graph()
        trainer = Trainer(graph, train_cfg=TrainConfig(epochs_max=6, patience=2, batch=2))
        losses = iter([3.0, 1.0, 2.0, 2.5])
        snapshots = []

        def fake_validation(split):
            snapshots.append(graph.state_dict())
            return next(losses)

        with patch.object(trainer, "validation_loss", side_effect=fake_validation):
            result = trainer.fit(tiny_split(4), tiny_split(2, seed=1))

        assert result.epochs_run == 4
        assert result.best_epoch == 1
        for name, value in snapshots[1].items():
            np.testing.assert_array_equal(graph.params[name].value, value)

    def test_non_finite_loss_aborts(self):
        """Test a NaN loss raises naming the epoch and batch"""
        train = tiny_split(4)
        train.images[0, 0, 0] = np.nan
        trainer = Trainer(tiny_graph(), train_cfg=TrainConfig(epochs_max=2, patience=1, batch=4))

        with pytest.raises(TrainingAbortedError, match="epoch 0 batch 0"):
            trainer.fit(train, tiny_split(2, seed=1))

    def test_empty_split(self):
        """Test an empty training split is rejected"""
        empty = DatasetSplit(images=np.zeros((0, SIZE, SIZE), dtype=np.float32), masks=np.zeros((0, SIZE, SIZE), dtype=bool))

        with pytest.raises(ValueError, match="non-empty"):
            Trainer(tiny_graph()).fit(empty, tiny_split(2))

    def test_deterministic(self):
        """Test one trial seed reproduces losses and weights"""
        cfg = TrainConfig(epochs_max=2, patience=2, batch=2)
        augmenter = Augmenter(AugPolicy(enable_denoise=False), max_workers=1)

        graph_a, a = train_trial(tiny_graph, tiny_split(6), tiny_split(2, seed=1), 4, train_cfg=cfg, augmenter=augmenter)
        graph_b, b = train_trial(tiny_graph, tiny_split(6), tiny_split(2, seed=1), 4, train_cfg=cfg, augmenter=augmenter)

        assert a.deterministic_dict() == b.deterministic_dict()
        for name, value in graph_a.state_dict().items():
            np.testing.assert_array_equal(value, graph_b.params[name].value)

    def test_validation_loss_is_finite_and_untracked(self):
        """Test validation loss runs without a tape"""
        trainer = Trainer(tiny_graph())

        value = trainer.validation_loss(tiny_split(5))

        assert np.isfinite(value) and value > 0

    @pytest.mark.slow
    def test_training_lowers_loss(self):
        """Test a few epochs reduce the training loss on an easy task"""
        cfg = TrainConfig(epochs_max=15, patience=15, batch=4, lr0=1e-2)
        trainer = Trainer(tiny_graph(), train_cfg=cfg)

        result = trainer.fit(tiny_split(12), tiny_split(4, seed=1))

        assert result.train_losses[-1] < result.train_losses[0]


class TestTrials:
    """Multi-trial runs and evaluation"""

    def test_run_trials_seeds_and_summary(self):
        """Test trial t uses seed + t and the summary counts every trial"""
        cfg = TrainConfig(epochs_max=1, patience=1, batch=4, trials=2, seed=10)

        report = run_trials(tiny_graph, tiny_split(4), tiny_split(2, seed=1), tiny_split(3, seed=2), train_cfg=cfg)

        assert [t.seed for t in report.trials] == [10, 11]
        assert report.dice.n == 2
        assert all(0.0 <= t.test_dice <= 1.0 for t in report.trials)

    def test_evaluate_split_counts_undefined_msd(self):
        """Test an all-background prediction leaves MSD undefined on every frame"""
        graph = tiny_graph()
        graph.params["head.weight"].value[...] = 0
        graph.params["head.bias"].value[...] = -5.0
        split = tiny_split(3)

        evaluation = evaluate_split(graph, split)

        assert evaluation.frames == 3
        assert evaluation.dice_mean == 0.0
        assert evaluation.msd_mean is None
        assert evaluation.undefined_msd_count == 3


class TestResultModels:
    """TrialResult and TrialSummary"""

    def test_best_epoch_must_hold_minimum(self):
        """Test a best_epoch that is not the minimum fails validation"""
        with pytest.raises(ValidationError):
            TrialResult(seed=0, train_losses=[1, 1], val_losses=[1.0, 0.5], best_epoch=0, epochs_run=2)

    def test_best_epoch_in_range(self):
        """Test best_epoch outside the series fails validation"""
        with pytest.raises(ValidationError):
            TrialResult(seed=0, train_losses=[1], val_losses=[1.0], best_epoch=3, epochs_run=1)

    def test_deterministic_dict_drops_wall_time(self):
        """Test wall-clock seconds are excluded from the reproducible view"""
        result = TrialResult(seed=0, train_losses=[1.0], val_losses=[1.0], best_epoch=0, epochs_run=1, wall_seconds=3.2)

        assert "wall_seconds" not in result.deterministic_dict()

    def test_summary_sample_std(self):
        """Test mean, sample std (ddof 1) and best"""
        summary = TrialSummary.from_values([0.8, 0.9, 1.0])

        assert summary.mean == pytest.approx(0.9)
        assert summary.std == pytest.approx(0.1)
        assert summary.best == 1.0
        assert summary.n == 3

    def test_summary_lower_is_better_and_missing(self):
        """Test MSD summaries take the minimum and skip undefined values"""
        summary = TrialSummary.from_values([2.0, None, 1.0], higher_is_better=False)

        assert summary.best == 1.0
        assert summary.n == 2

    def test_summary_empty(self):
        """Test no defined values give an empty summary"""
        summary = TrialSummary.from_values([None])

        assert summary.mean is None and summary.n == 0

    def test_report_aggregate(self):
        """Test aggregation picks Dice up and MSD down"""
        trials = [
            TrialResult(seed=s, train_losses=[1.0], val_losses=[1.0], best_epoch=0, epochs_run=1, test_dice=d, test_msd=m)
            for s, d, m in [(0, 0.7, 3.0), (1, 0.8, 2.0)]
        ]

        report = TrialsReport.aggregate(trials)

        assert report.dice.best == 0.8
        assert report.msd.best == 2.0
