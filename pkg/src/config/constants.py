"""
Constants and Default Values

This module contains the numeric defaults, tolerances and file-format magic
values used throughout the engine. Centralizing them keeps the training
protocol, the augmentation pipeline and the accounting targets in one place.
"""

# Input geometry
IMAGE_SIZE = 224
"""Side length of the square network input after preprocessing"""

BENCH_INPUT_SHAPE = (1, 1, IMAGE_SIZE, IMAGE_SIZE)
"""Input shape used for parameter, FLOP and FPS accounting"""

# Combined Dice-Focal loss
DICE_WEIGHT = 0.2
"""Weight of the soft Dice term in the combined loss"""

FOCAL_WEIGHT = 0.8
"""Weight of the focal term in the combined loss"""

FOCAL_ALPHA = 0.25
"""Focal loss balancing factor"""

FOCAL_GAMMA = 2.0
"""Focal loss focusing exponent"""

DICE_EPS = 1e-6
"""Smoothing term of the soft Dice loss"""

FOCAL_PT_CLAMP = 1e-7
"""p_t is clamped to [FOCAL_PT_CLAMP, 1 - FOCAL_PT_CLAMP] before the logarithm"""

SIGMOID_CLAMP = 30.0
"""Logits are clamped to +/- this value before exponentiation"""

# Optimizer and schedule
LEARNING_RATE = 1e-3
"""Initial Adam learning rate"""

ADAM_BETA1 = 0.9
"""Adam first-moment decay"""

ADAM_BETA2 = 0.999
"""Adam second-moment decay"""

ADAM_EPS = 1e-8
"""Adam denominator epsilon"""

BATCH_SIZE = 3
"""Training mini-batch size"""

MAX_EPOCHS = 50
"""Upper bound on training epochs"""

PATIENCE = 10
"""Early-stopping patience in epochs"""

POLY_POWER = 0.9
"""Exponent of the polynomial learning-rate decay"""

TRIALS = 3
"""Independent training runs per model"""

EARLY_STOP_MIN_DELTA = 1e-6
"""A validation loss counts as improved only when lower than best - MIN_DELTA"""

# Architecture
ULTRAUNET_BASE_CHANNELS = 24
"""Channel count of the first UltraUNet stage; doubles at every stage"""

ULTRAUNET_DEPTH = 5
"""Number of encoder stages"""

SE_REDUCTION = 16
"""Squeeze-and-excitation bottleneck reduction ratio"""

GN_GROUPS = 8
"""Group count for Group Normalization"""

GN_EPS = 1e-5
"""Group Normalization variance epsilon"""

REF_UNET_CHANNELS = (64, 128, 256, 512, 1024)
"""Channel plan of the classical reference UNet"""

DENOISER_CHANNELS = (16, 32, 64)
"""Channel plan of the denoising UNet"""

# Accounting targets
ULTRAUNET_PARAMS_TARGET = 4_454_000
"""Published UltraUNet parameter count"""

REF_UNET_PARAMS_TARGET = 31_036_000
"""Published reference UNet parameter count"""

ULTRAUNET_GFLOPS_TARGET = 6.005
"""Published UltraUNet GFLOPs at 1x1x224x224"""

REF_UNET_GFLOPS_TARGET = 36.943
"""Published reference UNet GFLOPs at 1x1x224x224"""

PARAMS_TOLERANCE = 0.10
"""Accepted relative parameter error for the calibrated UltraUNet"""

REF_PARAMS_TOLERANCE = 0.01
"""Accepted relative parameter error for the reference UNet"""

GFLOPS_TOLERANCE = 0.20
"""Accepted relative GFLOP error under the documented convention"""

# Benchmark
FPS_DURATION_SECONDS = 10.0
"""Length of the timed FPS loop"""

FPS_MIN_DURATION_SECONDS = 1.0
"""Shortest accepted FPS measurement window"""

FPS_WARMUP_FRAMES = 10
"""Frames run before timing starts"""

# Augmentation
FLIP_PROBABILITY = 0.5
"""Probability of a horizontal flip"""

DEGRADE_PROBABILITY = 0.25
"""Probability of the PSF/speckle branch"""

DENOISE_PROBABILITY = 0.25
"""Probability of the learned-denoiser branch"""

SPECKLE_SIGMA_RANGE = (0.05, 0.4)
"""Range of the multiplicative speckle scale sampled per image"""

PSF_SIGMA_RANGE = (0.5, 2.5)
"""Range of axial and lateral PSF sigmas in pixels"""

HISTOGRAM_BINS = 256
"""Bin count of reference histograms"""

MIN_DENOISER_IMAGES = 10
"""Smallest image set accepted by denoiser training"""

DENOISER_EPOCHS = 10
"""Denoiser training epochs"""

DENOISER_VAL_FRACTION = 0.2
"""Held-out fraction for denoiser validation"""

# Synthetic data
MIN_DATASET_SIZE = 10
"""Smallest synthetic dataset gen_dataset accepts"""

SPLIT_FRACTIONS = (0.8, 0.1, 0.1)
"""Train / validation / test split"""

MIN_CONTOUR_POINTS = 64
"""Fewest points on a generated contour"""

# Metrics
PREDICTION_THRESHOLD = 0.5
"""Probability threshold that turns sigmoid outputs into masks"""

# Persistence
WEIGHTS_MAGIC = b"UUNW"
"""Magic bytes opening every weights file"""

WEIGHTS_VERSION = 1
"""Current weights file version"""

PGM_MAXVAL = 255
"""Maximum grey value written to PGM files"""
