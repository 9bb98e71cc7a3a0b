"""
Tests for the augmentation service

Covers:
- Plan sampling: branch exclusivity, frequencies, disabled augmentations
- Applying plans: flip consistency, intensity steps leave labels alone
- Seeded per-sample generators and worker-count independence
- Missing denoiser warns once and is skipped
- Denoiser training split, history and best-epoch restore
- Trained denoiser beats the identity baseline on held-out corrupted images
"""
import logging
from collections import Counter

import pytest
import numpy as np
from scipy.ndimage import gaussian_filter

# Import from src
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.models.architectures import build_denoiser
from src.models.augmentation import AugPlan, AugPolicy
from src.models.training import DenoiserTrainConfig
from src.services.augmenter import Augmenter, corrupt, denoise_augment, sample_plan, train_denoiser


def make_sample(size: int = 16, seed: int = 0):
    rng = np.random.default_rng(seed)
    img = rng.random((size, size)).astype(np.float32) * 0.8 + 0.1
    mask = np.zeros((size, size), dtype=bool)
    mask[size // 2, 2:size - 2] = True
    contour = np.column_stack([np.arange(2, size - 2, dtype=np.float64), np.full(size - 4, size // 2, dtype=np.float64)])
    return img, mask, contour


class TestSamplePlan:
    """Sampling augmentation plans"""

    def test_denoise_never_with_degradation(self):
        """Test denoise never co-occurs with PSF or speckle"""
        rng = np.random.default_rng(0)
        policy = AugPolicy()

        for _ in range(5000):
            plan = sample_plan(policy, rng)
            assert not (plan.denoise and (plan.psf or plan.speckle))

    @pytest.mark.slow
    def test_branch_frequencies(self):
        """Test flip 0.5, degrade 0.25, denoise 0.25 and uniform degradation subsets over 10^5 draws"""
        rng = np.random.default_rng(1)
        policy = AugPolicy()
        n = 100_000

        plans = [sample_plan(policy, rng) for _ in range(n)]
        branches = Counter(p.branch for p in plans)
        subsets = Counter((p.psf, p.speckle) for p in plans if p.branch == "degrade")

        assert sum(p.flip for p in plans) / n == pytest.approx(0.5, abs=0.01)
        assert branches["degrade"] / n == pytest.approx(0.25, abs=0.01)
        assert branches["denoise"] / n == pytest.approx(0.25, abs=0.01)
        assert branches["none"] / n == pytest.approx(0.5, abs=0.01)
        for key in [(True, False), (False, True), (True, True)]:
            assert subsets[key] / branches["degrade"] == pytest.approx(1 / 3, abs=0.02)

    def test_disabled_denoise_moves_mass_to_none(self):
        """Test a disabled denoiser branch never appears"""
        rng = np.random.default_rng(2)
        policy = AugPolicy(enable_denoise=False)

        plans = [sample_plan(policy, rng) for _ in range(4000)]

        assert not any(p.denoise for p in plans)
        assert sum(p.branch == "none" for p in plans) / 4000 == pytest.approx(0.75, abs=0.03)

    def test_psf_disabled(self):
        """Test degradation falls back to speckle only when PSF is off"""
        rng = np.random.default_rng(3)
        policy = AugPolicy(enable_psf=False)

        plans = [sample_plan(policy, rng) for _ in range(2000)]

        assert not any(p.psf for p in plans)
        assert any(p.speckle for p in plans)

    def test_everything_disabled(self):
        """Test all switches off gives empty plans"""
        rng = np.random.default_rng(4)
        policy = AugPolicy(enable_flip=False, enable_psf=False, enable_speckle=False, enable_denoise=False)

        assert all(sample_plan(policy, rng).steps == () for _ in range(500))

    def test_probabilities_must_fit(self):
        """Test p_degrade + p_denoise above 1 is rejected"""
        with pytest.raises(ValueError):
            AugPolicy(p_degrade=0.7, p_denoise=0.5)

    def test_fixed_step_order(self):
        """Test a plan lists flip, PSF then speckle"""
        assert AugPlan(flip=True, psf=True, speckle=True).steps == ("flip", "psf", "speckle")

    def test_policy_label(self):
        """Test the label names the enabled intensity augmentations"""
        assert AugPolicy().label == "psf+speckle+denoise"
        assert AugPolicy(enable_psf=False, enable_speckle=False, enable_denoise=False).label == "none"


class TestApplyPlan:
    """Applying plans to samples"""

    def test_flip_moves_all_three(self):
        """Test a flip plan mirrors image, mask and contour together"""
        img, mask, contour = make_sample()
        augmenter = Augmenter(AugPolicy())

        out_img, out_mask, out_contour = augmenter.apply_plan(AugPlan(flip=True), (img, mask, contour), np.random.default_rng(0))

        np.testing.assert_array_equal(out_img, img[:, ::-1])
        for x, y in out_contour:
            assert out_mask[int(y), int(x)]

    def test_intensity_steps_keep_labels(self):
        """Test PSF and speckle change the image only"""
        img, mask, contour = make_sample()
        augmenter = Augmenter(AugPolicy())

        out_img, out_mask, out_contour = augmenter.apply_plan(
            AugPlan(psf=True, speckle=True), (img, mask, contour), np.random.default_rng(0)
        )

        assert not np.array_equal(out_img, img)
        assert out_img.min() >= 0.0 and out_img.max() <= 1.0
        np.testing.assert_array_equal(out_mask, mask)
        np.testing.assert_array_equal(out_contour, contour)

    def test_denoise_uses_denoiser(self):
        """Test the denoising step runs the loaded network"""
        img, mask, contour = make_sample()
        denoiser = build_denoiser(image_size=16)
        augmenter = Augmenter(AugPolicy(), denoiser=denoiser)

        out_img, _, _ = augmenter.apply_plan(AugPlan(denoise=True), (img, mask, contour), np.random.default_rng(0))

        # untrained residual denoiser is the identity
        np.testing.assert_allclose(out_img, denoise_augment(img, denoiser), atol=1e-6)
        np.testing.assert_allclose(out_img, img, atol=1e-6)

    def test_missing_denoiser_warns_once(self, caplog):
        """Test a sampled denoise step without a denoiser warns once and does nothing"""
        policy = AugPolicy(p_flip=0.0, p_degrade=0.0, p_denoise=1.0)
        augmenter = Augmenter(policy, max_workers=1)
        img, mask, contour = make_sample()

        with caplog.at_level(logging.WARNING):
            results = [augmenter.augment_sample((img, mask, contour), (0, i))[0] for i in range(5)]

        warnings = [r for r in caplog.records if "no denoiser" in r.getMessage()]
        assert len(warnings) == 1
        for out_img, _, _ in results:
            np.testing.assert_array_equal(out_img, img)


class TestSeeding:
    """Per-sample generators"""

    def test_same_entropy_same_output(self):
        """Test identical entropy reproduces the plan and image"""
        augmenter = Augmenter(AugPolicy(seed=7))
        sample = make_sample()

        (a, _, _), plan_a = augmenter.augment_sample(sample, (0, 3, 5))
        (b, _, _), plan_b = augmenter.augment_sample(sample, (0, 3, 5))

        assert plan_a == plan_b
        np.testing.assert_array_equal(a, b)

    def test_policy_seed_changes_stream(self):
        """Test different policy seeds give different plan streams"""
        sample = make_sample()
        plans_a = [Augmenter(AugPolicy(seed=0)).augment_sample(sample, (i,))[1] for i in range(40)]
        plans_b = [Augmenter(AugPolicy(seed=1)).augment_sample(sample, (i,))[1] for i in range(40)]

        assert plans_a != plans_b

    def test_worker_count_does_not_change_batch(self):
        """Test a batch is identical with one worker and with four"""
        samples = [make_sample(seed=i) for i in range(6)]
        images = np.stack([s[0] for s in samples])
        masks = np.stack([s[1] for s in samples])
        contours = [s[2] for s in samples]
        entropy = [(0, 1, i) for i in range(6)]

        serial = Augmenter(AugPolicy(), max_workers=1).augment_batch(images, masks, contours, entropy)
        threaded = Augmenter(AugPolicy(), max_workers=4).augment_batch(images, masks, contours, entropy)

        np.testing.assert_array_equal(serial[0], threaded[0])
        np.testing.assert_array_equal(serial[1], threaded[1])
        assert serial[0].dtype == np.float32 and serial[1].dtype == bool


class TestCorrupt:
    """PSF plus speckle corruption used for denoiser training"""

    def test_seeded_and_clamped(self):
        """Test corruption is reproducible and stays in [0, 1]"""
        img = make_sample()[0]

        a = corrupt(img, np.random.default_rng(5))
        b = corrupt(img, np.random.default_rng(5))

        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0.0 and a.max() <= 1.0
        assert not np.array_equal(a, img)


class TestTrainDenoiser:
    """Training the augmentation denoiser"""

    def _images(self, count: int):
        return [make_sample(seed=i)[0] for i in range(count)]

    def test_needs_ten_images(self):
        """Test fewer than 10 clean images are rejected"""
        with pytest.raises(ValueError, match="at least 10"):
            train_denoiser(self._images(9))

    def test_history_and_best_epoch(self):
        """Test per-epoch histories and a best epoch at the validation minimum"""
        cfg = DenoiserTrainConfig(epochs=2, batch=4, seed=0)

        result = train_denoiser(self._images(10), cfg)

        assert len(result.train_mse) == 2
        assert len(result.val_mse) == 2
        assert result.best_epoch == int(np.argmin(result.val_mse))
        assert result.best_val_mse == min(result.val_mse)
        assert result.identity_val_mse > 0

    def test_deterministic(self):
        """Test one seed gives identical weights"""
        cfg = DenoiserTrainConfig(epochs=1, batch=4, seed=3)

        a = train_denoiser(self._images(10), cfg)
        b = train_denoiser(self._images(10), cfg)

        assert a.val_mse == b.val_mse
        for name, value in a.graph.state_dict().items():
            np.testing.assert_array_equal(value, b.graph.params[name].value)

    @pytest.mark.slow
    def test_beats_identity_baseline(self):
        """Test the trained denoiser lowers held-out MSE below leaving the noisy input as is"""
        rng = np.random.default_rng(0)
        images = []
        for _ in range(30):
            field = gaussian_filter(rng.random((32, 32)), 3.0)
            field = (field - field.min()) / (field.max() - field.min())
            images.append((0.2 + 0.6 * field).astype(np.float32))
        cfg = DenoiserTrainConfig(epochs=25, batch=4, lr=2e-3, seed=0)

        result = train_denoiser(images, cfg)

        assert result.best_val_mse < result.identity_val_mse
