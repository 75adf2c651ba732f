"""Deterministic image decoding and tensor preprocessing.

Images are decoded to RGB, resized so the shorter side matches the target
resolution (bilinear), center-cropped to a square, scaled to [0, 1], and
standardized with the ImageNet channel statistics. Every constant that
affects the output lives here and is copied verbatim into the dump
manifest, so a feature stack can always be traced back to the exact
pixels that produced it.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
INTERPOLATION = "bilinear"


def resized_dims(width: int, height: int, short_side: int) -> tuple[int, int]:
    """Return (new_width, new_height) with the shorter side scaled to ``short_side``.

    The longer side is scaled by the same factor and truncated toward zero,
    the usual shorter-side-resize convention; both results are always at
    least ``short_side``, so a subsequent square crop of that size fits.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"image dims must be positive, got {width}x{height}")
    if width <= height:
        return short_side, max(short_side, int(height * short_side / width))
    return max(short_side, int(width * short_side / height)), short_side


def load_image(path: str | Path) -> Image.Image:
    """Decode ``path`` as an RGB image; decode errors propagate to the caller."""
    with Image.open(path) as img:
        return img.convert("RGB")


def preprocess(img: Image.Image, size: int) -> torch.Tensor:
    """Resize-shorter-side to ``size``, center-crop ``size`` x ``size``, standardize.

    Returns a float32 tensor of shape (3, size, size).
    """
    if size < 1:
        raise ValueError(f"target size must be >= 1, got {size}")
    new_w, new_h = resized_dims(img.width, img.height, size)
    img = img.resize((new_w, new_h), Image.Resampling.BILINEAR)
    left = (new_w - size) // 2
    top = (new_h - size) // 2
    img = img.crop((left, top, left + size, top + size))
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr -= np.asarray(IMAGENET_MEAN, dtype=np.float32)
    arr /= np.asarray(IMAGENET_STD, dtype=np.float32)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))
