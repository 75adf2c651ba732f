"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

_UINT64_MASK = (1 << 64) - 1


def check_seed(seed: int) -> int:
    """Normalize a seed to an unsigned 64-bit integer."""
    if not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    return int(seed) & _UINT64_MASK


def mix_seed(seed: int, *parts: int) -> int:
    """Derive a child seed from a base seed and integer context values.

    Splitmix64-style mixing so derived streams are stable across platforms
    and runs. Used wherever independent sub-tasks (per mask, per restart)
    need their own deterministic randomness.
    """
    h = check_seed(seed)
    for p in parts:
        h = (h ^ (int(p) & _UINT64_MASK)) & _UINT64_MASK
        h = (h + 0x9E3779B97F4A7C15) & _UINT64_MASK
        z = h
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _UINT64_MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _UINT64_MASK
        h = z ^ (z >> 31)
    return h


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    """Reject arrays containing NaN or infinity."""
    arr = np.asarray(arr)
    if arr.size and not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_feature_matrix(features: np.ndarray, name: str = "features") -> np.ndarray:
    """Validate and return a 2-D float64 feature matrix with N >= 1 rows."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"{name} must be 2-D (n_samples, n_features), got shape {features.shape}")
    if features.shape[0] < 1 or features.shape[1] < 1:
        raise ValueError(f"{name} must be non-empty, got shape {features.shape}")
    check_finite(name, features)
    return features


def check_boxes(boxes: np.ndarray, name: str = "boxes", unit: bool = False) -> np.ndarray:
    """Validate an (n, 4) array of (x, y, w, h) boxes with positive extent.

    With ``unit=True`` the boxes must additionally lie inside [0, 1]^2.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    if boxes.ndim == 1 and boxes.size == 0:
        boxes = boxes.reshape(0, 4)
    if boxes.ndim != 2 or boxes.shape[1] != 4:
        raise ValueError(f"{name} must have shape (n, 4), got {boxes.shape}")
    check_finite(name, boxes)
    if boxes.size:
        if (boxes[:, 2] <= 0).any() or (boxes[:, 3] <= 0).any():
            raise ValueError(f"{name}: box width and height must be > 0")
        if unit:
            if (boxes[:, :2] < 0).any() or (boxes[:, 0] + boxes[:, 2] > 1).any() or (
                boxes[:, 1] + boxes[:, 3] > 1
            ).any():
                raise ValueError(f"{name}: boxes must lie inside the unit square")
    return boxes


def l2_normalize_rows(x: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """Return a row-normalized copy of ``x``; zero rows are left as zeros."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.where(norms > eps, norms, 1.0)
    return x / safe
