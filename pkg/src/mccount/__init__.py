"""Multi-category object counting toolkit.

Multi-channel Gaussian density maps from point annotations, an RGB/NIR
dual-attention counting model with reverse-mode gradients verified against
finite differences, a spatial contrast loss that penalizes overlapping
per-category predictions, and long-tail-aware evaluation metrics.
"""

from .backend import BACKEND, USE_NUMBA
from .density import DensityMap, GaussianKernelSpec, IgnoreMask
from .losses import LossConfig
from .metrics import CategoryWeights, CountRecord, MetricReport
from .model import MccModel, ModelConfig
from .scenes import SceneConfig
from .taxonomy import AnnotationSet, CategoryTaxonomy, IgnoreBox
from .tensor import GradTape, ShapeError, Tensor
from .training import ExperimentResult, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "AnnotationSet", "BACKEND", "CategoryTaxonomy", "CategoryWeights",
    "CountRecord", "DensityMap", "ExperimentResult", "GaussianKernelSpec",
    "GradTape", "IgnoreBox", "IgnoreMask", "LossConfig", "MccModel",
    "MetricReport", "ModelConfig", "SceneConfig", "ShapeError", "Tensor",
    "TrainConfig", "USE_NUMBA", "__version__",
]
