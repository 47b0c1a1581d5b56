"""
Numeric constants shared across the package.

Training defaults: Adam with a maximum learning rate of 0.003, mini-batches
of 128, a Gaussian ramp-up over the first 80 epochs and a ramp-down over the
last 50 of 300 epochs, λ = 0.1, m_e = 1.0 and m_g = 0.5.
"""
from typing import Dict


class LossDefaults:
    LAMBDA = 0.1
    MARGIN_GEODESIC = 0.5
    MARGIN_EUCLIDEAN = 1.0


class ScheduleDefaults:
    TOTAL_EPOCHS = 300
    RAMPUP_LENGTH = 80
    RAMPDOWN_LENGTH = 50
    MAX_LEARNING_RATE = 0.003
    RAMPUP_EXPONENT = -5.0
    RAMPDOWN_EXPONENT = -12.5
    BETA1_FINAL = 0.5


class AdamDefaults:
    BETA1 = 0.9
    BETA2 = 0.999
    EPSILON = 1e-8


class TrainingDefaults:
    BATCH_SIZE = 128
    SEED = 1


class Numerics:
    """Tolerances and clamps used by the geometry and the tensor engine."""

    ARCCOS_CLAMP = 1e-7
    """Inner products are clamped to [-1 + eps, 1 - eps] before arccos."""
    MIN_FEATURE_NORM = 1e-12
    UNIT_NORM_TOLERANCE = 1e-4
    BATCH_NORM_EPSILON = 1e-5
    BATCH_NORM_MOMENTUM = 0.9
    LEAKY_RELU_ALPHA = 0.1
    NOISE_SIGMA = 0.15
    DROPOUT_RATE = 0.5


class RandomStreams:
    """Keys of the independent random streams derived from one run seed."""

    INIT = 0
    LAYERS = 1
    BATCHES = 2
    PAIRS = 3
    KMEANS = 4
    SUBSET = 5


SCHEDULE_PRESETS: Dict[str, Dict[str, int]] = {
    # 300 epoch benchmark runs
    "table": {"total_epochs": 300, "rampup_len": 80, "rampdown_len": 50},
    # 150 epoch runs used for the 2-D and 3-D embedding plots
    "figure": {"total_epochs": 150, "rampup_len": 40, "rampdown_len": 30},
}

DATASET_CLASSES: Dict[str, int] = {
    "mnist": 10,
    "cifar10": 10,
    "cifar100": 20,
}
