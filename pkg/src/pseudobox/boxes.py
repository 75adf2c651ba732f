"""Axis-aligned box geometry on (x, y, w, h) boxes.

Coordinates are unit-agnostic: every quantity here is a ratio of areas, so
normalized and pixel boxes give identical results.
"""

from __future__ import annotations

import numpy as np


def box_iou(a, b) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    ix = max(0.0, min(ax0 + aw, bx0 + bw) - max(ax0, bx0))
    iy = max(0.0, min(ay0 + ah, by0 + bh) - max(ay0, by0))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def box_giou(a, b) -> float:
    """Generalized IoU: IoU minus the enclosing-box slack, in [-1, 1]."""
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    ix = max(0.0, min(ax0 + aw, bx0 + bw) - max(ax0, bx0))
    iy = max(0.0, min(ay0 + ah, by0 + bh) - max(ay0, by0))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    iou = inter / union if union > 0 else 0.0
    ex = max(ax0 + aw, bx0 + bw) - min(ax0, bx0)
    ey = max(ay0 + ah, by0 + bh) - min(ay0, by0)
    enclose = ex * ey
    if enclose <= 0:
        return iou
    return iou - (enclose - union) / enclose


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (n, 4) and (m, 4) arrays of (x, y, w, h) boxes."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax0, ay0 = a[:, 0:1], a[:, 1:2]
    ax1, ay1 = ax0 + a[:, 2:3], ay0 + a[:, 3:4]
    bx0, by0 = b[:, 0], b[:, 1]
    bx1, by1 = bx0 + b[:, 2], by0 + b[:, 3]
    ix = np.clip(np.minimum(ax1, bx1[None, :]) - np.maximum(ax0, bx0[None, :]), 0.0, None)
    iy = np.clip(np.minimum(ay1, by1[None, :]) - np.maximum(ay0, by0[None, :]), 0.0, None)
    inter = ix * iy
    union = a[:, 2:3] * a[:, 3:4] + (b[:, 2] * b[:, 3])[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def giou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise generalized IoU between (n, 4) and (m, 4) box arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax0, ay0 = a[:, 0:1], a[:, 1:2]
    ax1, ay1 = ax0 + a[:, 2:3], ay0 + a[:, 3:4]
    bx0, by0 = b[:, 0], b[:, 1]
    bx1, by1 = bx0 + b[:, 2], by0 + b[:, 3]
    ix = np.clip(np.minimum(ax1, bx1[None, :]) - np.maximum(ax0, bx0[None, :]), 0.0, None)
    iy = np.clip(np.minimum(ay1, by1[None, :]) - np.maximum(ay0, by0[None, :]), 0.0, None)
    inter = ix * iy
    union = a[:, 2:3] * a[:, 3:4] + (b[:, 2] * b[:, 3])[None, :] - inter
    iou = np.zeros_like(inter)
    np.divide(inter, union, out=iou, where=union > 0)
    ex = np.maximum(ax1, bx1[None, :]) - np.minimum(ax0, bx0[None, :])
    ey = np.maximum(ay1, by1[None, :]) - np.minimum(ay0, by0[None, :])
    enclose = ex * ey
    slack = np.zeros_like(inter)
    np.divide(enclose - union, enclose, out=slack, where=enclose > 0)
    return iou - slack


def xywh_to_cxcywh(boxes: np.ndarray) -> np.ndarray:
    """Convert (x, y, w, h) corner form to (cx, cy, w, h) center form."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    out = boxes.copy()
    out[:, 0] = boxes[:, 0] + boxes[:, 2] / 2.0
    out[:, 1] = boxes[:, 1] + boxes[:, 3] / 2.0
    return out
