"""
amcloss trains convolutional classifiers with an angular margin contrastive
loss: deep features are projected onto the unit hypersphere and pairs of a
mini-batch are pulled together or pushed apart by their geodesic distance,
depending on whether the network predicts the same class for both.

The package ships its own small reverse-mode autodiff engine, the two
reference networks, the training loop with Gaussian ramp schedules, MNIST and
CIFAR readers, clustering metrics, significance tests and Grad-CAM maps.
"""

import numpy
import scipy
import sklearn

from ._checkpoint import load_checkpoint, save_checkpoint
from ._trainer import evaluate, fit
from ._version import __version__
from .config import RunConfig
from .datasets import Dataset, load_cifar_bin, load_dataset, load_mnist_idx
from .gradcam import Heatmap, gradcam
from .losses import LossConfig, amc_loss, combined_loss, eucd_contrastive, geodesic, normalize
from .models import ArchitectureSpec, Model, build
from .report import RunReport
from .schedules import ScheduleConfig, schedule_values

try:
    import PIL

    pil_version = PIL.__version__
except ImportError:
    pil_version = "none"

_debug_versions = (
    f"amcloss=={__version__}, numpy={numpy.__version__}, scipy={scipy.__version__}, "
    f"scikit-learn={sklearn.__version__}, PIL={pil_version}"
)

__all__ = [
    "__version__",
    "_debug_versions",
    "ArchitectureSpec",
    "Dataset",
    "Heatmap",
    "LossConfig",
    "Model",
    "RunConfig",
    "RunReport",
    "ScheduleConfig",
    "amc_loss",
    "build",
    "combined_loss",
    "eucd_contrastive",
    "evaluate",
    "fit",
    "geodesic",
    "gradcam",
    "load_checkpoint",
    "load_cifar_bin",
    "load_dataset",
    "load_mnist_idx",
    "normalize",
    "save_checkpoint",
    "schedule_values",
]
