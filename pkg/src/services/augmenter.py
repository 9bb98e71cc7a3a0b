"""
Augmentation Service
Samples augmentation plans, applies them to training samples and trains the
denoiser used by the denoising branch
"""
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..autodiff.losses import mse_loss
from ..autodiff.tape import Tape, backward
from ..config.constants import MIN_DENOISER_IMAGES
from ..config.settings import settings
from ..models.architectures import DenoiserConfig, build_denoiser
from ..models.augmentation import AugPlan, AugPolicy, SpeckleParams
from ..models.imaging import BinaryMask, Contour, GrayImage
from ..models.model_graph import ModelGraph
from ..models.training import DenoiserTrainConfig
from ..utils.image_ops import PSFKernel, hflip, psf_blur, speckle
from .optimizer import AdamOptimizer

logger = logging.getLogger(__name__)

Sample = Tuple[GrayImage, BinaryMask, Contour]

_DEGRADE_SUBSETS = ((True, False), (False, True), (True, True))
"""(psf, speckle) choices inside the degradation branch"""


def sample_plan(policy: AugPolicy, rng: np.random.Generator) -> AugPlan:
    """
    Draw one augmentation plan

    Flip is decided independently; then exactly one branch is taken:
    degradation (PSF, speckle or both, uniformly among the enabled
    subsets), denoising, or none. Two uniforms are always consumed so the
    stream stays aligned whatever the outcome.

    Args:
        policy: Probabilities and enable switches
        rng: Generator for this sample

    Returns:
        AugPlan; never contains denoise together with PSF or speckle
    """
    flip = bool(rng.random() < policy.effective_flip)
    u = rng.random()

    if u < policy.effective_degrade:
        subsets = [
            (psf, spk)
            for psf, spk in _DEGRADE_SUBSETS
            if (not psf or policy.enable_psf) and (not spk or policy.enable_speckle)
        ]
        psf, spk = subsets[int(rng.integers(len(subsets)))]
        return AugPlan(flip=flip, psf=psf, speckle=spk)
    if u < policy.effective_degrade + policy.effective_denoise:
        return AugPlan(flip=flip, denoise=True)
    return AugPlan(flip=flip)


def denoise_augment(img: GrayImage, denoiser: ModelGraph) -> GrayImage:
    """Run the denoiser on one image and clamp to [0, 1]."""
    out = denoiser.predict(np.asarray(img)[None, None])[0, 0]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def corrupt(img: GrayImage, rng: np.random.Generator) -> GrayImage:
    """PSF blur followed by speckle, both at randomly drawn strength."""
    return speckle(psf_blur(img, PSFKernel.sample(rng)), SpeckleParams.sample(rng), rng)


class Augmenter:
    """
    Applies sampled plans to training samples

    Each sample gets its own generator derived from the policy seed and the
    caller's entropy, so a batch is reproducible regardless of how many
    worker threads process it.
    """

    def __init__(
        self,
        policy: AugPolicy,
        denoiser: Optional[ModelGraph] = None,
        max_workers: Optional[int] = None,
    ):
        self.policy = policy
        self.denoiser = denoiser
        self.max_workers = max_workers or settings.ultraseg_threads
        self._warned = False
        self._lock = threading.Lock()

    def _warn_missing_denoiser(self) -> None:
        with self._lock:
            if not self._warned:
                logger.warning("Denoising augmentation sampled but no denoiser is loaded; skipping the step")
                self._warned = True

    def apply_plan(self, plan: AugPlan, sample: Sample, rng: np.random.Generator) -> Sample:
        """Apply a plan in its fixed order; intensity steps leave mask and contour alone."""
        img, mask, contour = sample
        if plan.flip:
            img, mask, contour = hflip(img, mask, contour)
        if plan.psf:
            img = psf_blur(img, PSFKernel.sample(rng))
        if plan.speckle:
            img = speckle(img, SpeckleParams.sample(rng), rng)
        if plan.denoise:
            if self.denoiser is None:
                self._warn_missing_denoiser()
            else:
                img = denoise_augment(img, self.denoiser)
        return np.asarray(img, dtype=np.float32), mask, contour

    def augment_sample(self, sample: Sample, entropy: Sequence[int]) -> Tuple[Sample, AugPlan]:
        rng = np.random.default_rng(np.random.SeedSequence([self.policy.seed, *entropy]))
        plan = sample_plan(self.policy, rng)
        return self.apply_plan(plan, sample, rng), plan

    def augment_batch(
        self,
        images: np.ndarray,
        masks: np.ndarray,
        contours: Sequence[Contour],
        entropy: Sequence[Sequence[int]],
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Augment a stacked batch

        Args:
            images: (B, H, W) float images
            masks: (B, H, W) bool masks
            contours: B contours
            entropy: Per-sample seed material, e.g. (trial seed, epoch, index)

        Returns:
            Augmented (images, masks) in input order
        """
        jobs = [((images[i], masks[i], contours[i]), entropy[i]) for i in range(len(images))]
        if self.max_workers <= 1 or len(jobs) <= 1:
            results = [self.augment_sample(s, e) for s, e in jobs]
        else:
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                results = list(pool.map(lambda job: self.augment_sample(*job), jobs))
        out_images = np.stack([r[0][0] for r in results]).astype(np.float32)
        out_masks = np.stack([r[0][1] for r in results]).astype(bool)
        return out_images, out_masks


@dataclass
class DenoiserTrainingResult:
    """Trained denoiser with its per-epoch MSE history."""

    graph: ModelGraph
    train_mse: List[float] = field(default_factory=list)
    val_mse: List[float] = field(default_factory=list)
    best_epoch: int = 0
    identity_val_mse: float = 0.0

    @property
    def best_val_mse(self) -> float:
        return self.val_mse[self.best_epoch]


def _val_mse(graph: ModelGraph, noisy: np.ndarray, clean: np.ndarray) -> float:
    pred = graph.predict(noisy[:, None])[:, 0]
    return float(np.mean((pred.astype(np.float64) - clean) ** 2))


def train_denoiser(
    clean_images: Sequence[GrayImage],
    cfg: Optional[DenoiserTrainConfig] = None,
    denoiser_cfg: Optional[DenoiserConfig] = None,
) -> DenoiserTrainingResult:
    """
    Train the denoising UNet on corrupted copies of clean images

    Images are split 80/20 with a seeded permutation. Training inputs are
    re-corrupted every epoch; the validation pairs are corrupted once. The
    weights with the lowest validation MSE are restored before returning.

    Args:
        clean_images: Clean frames, all the same size (divisible by 4)
        cfg: Optimizer and split settings
        denoiser_cfg: Denoiser architecture

    Returns:
        DenoiserTrainingResult

    Raises:
        ValueError: If fewer than 10 images are given
    """
    cfg = cfg or DenoiserTrainConfig()
    if len(clean_images) < MIN_DENOISER_IMAGES:
        raise ValueError(
            f"denoiser training needs at least {MIN_DENOISER_IMAGES} images, got {len(clean_images)}"
        )
    clean = np.stack([np.asarray(img, dtype=np.float32) for img in clean_images])
    n = len(clean)

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    order = rng.permutation(n)
    n_val = max(1, int(round(n * cfg.val_fraction)))
    val_idx, train_idx = order[:n_val], order[n_val:]

    val_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    val_clean = clean[val_idx]
    val_noisy = np.stack([corrupt(img, val_rng) for img in val_clean])
    identity = float(np.mean((val_noisy.astype(np.float64) - val_clean) ** 2))

    graph = build_denoiser(denoiser_cfg, seed=cfg.seed, image_size=clean.shape[-1])
    optimizer = AdamOptimizer(graph.parameters(), lr=cfg.lr)
    result = DenoiserTrainingResult(graph=graph, identity_val_mse=identity)
    best_state = graph.state_dict()
    best_val = np.inf

    logger.info(f"Training denoiser on {len(train_idx)} images, validating on {n_val}")
    for epoch in range(cfg.epochs):
        epoch_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, epoch]))
        perm = train_idx[epoch_rng.permutation(len(train_idx))]
        total = 0.0
        for start in range(0, len(perm), cfg.batch):
            idx = perm[start : start + cfg.batch]
            target = clean[idx]
            noisy = np.stack([corrupt(img, epoch_rng) for img in target])
            tape = Tape()
            pred = graph.forward(noisy[:, None], tape=tape)
            loss = mse_loss(pred, target[:, None])
            backward(tape, loss)
            optimizer.step()
            total += float(loss.value) * len(idx)
        result.train_mse.append(total / len(perm))

        val = _val_mse(graph, val_noisy, val_clean)
        result.val_mse.append(val)
        if val < best_val:
            best_val = val
            best_state = graph.state_dict()
            result.best_epoch = epoch
        logger.info(
            f"Denoiser epoch {epoch + 1}/{cfg.epochs}: train MSE {result.train_mse[-1]:.6f}, "
            f"val MSE {val:.6f} (identity {identity:.6f})"
        )

    graph.load_state_dict(best_state)
    return result
