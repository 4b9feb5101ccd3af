"""Gland segmentation in H&E histology: stain deconvolution, a dual-output
LinkNet-style network on a small autodiff core, Otsu/morphology
post-processing and object-level metrics."""

from .losses import LossKind, composite_loss, total_loss
from .metrics import f1_object, hausdorff, object_dice, object_hausdorff
from .network import NetworkConfig, build, forward, num_params
from .postprocess import PostprocessParams, postprocess_pipeline

__version__ = "0.1.0"

__all__ = [
    "LossKind", "composite_loss", "total_loss",
    "f1_object", "hausdorff", "object_dice", "object_hausdorff",
    "NetworkConfig", "build", "forward", "num_params",
    "PostprocessParams", "postprocess_pipeline",
]
