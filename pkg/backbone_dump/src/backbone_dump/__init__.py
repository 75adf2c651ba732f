"""Export multi-level backbone feature maps as ``.fms`` stacks.

Companion producer for the proposal-extraction pipeline: it runs a
torchvision residual network over a directory of images and writes one
feature stack per image in the consumer's binary container format, plus a
``manifest.json`` that pins down the backbone, its weights, and the exact
preprocessing so every dump is reproducible byte for byte.
"""

from .dump import DumpSpec, dump_features
from .models import (
    STAGE_CHANNELS,
    build_backbone,
    expected_shape,
    stage_features,
    supported_models,
)
from .preprocess import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    load_image,
    preprocess,
    resized_dims,
)

__version__ = "0.1.0"

__all__ = [
    "DumpSpec",
    "IMAGENET_MEAN",
    "IMAGENET_STD",
    "STAGE_CHANNELS",
    "build_backbone",
    "dump_features",
    "expected_shape",
    "load_image",
    "preprocess",
    "resized_dims",
    "stage_features",
    "supported_models",
]
