"""Round-to-round filtering of detector outputs into the next training set.

Scoring order decides everything: boxes are ranked by score (descending,
ties broken by the box's x then y coordinate), truncated to the top k, and
then greedily accepted unless they overlap an already accepted box at IoU
>= the cutoff. Label-agnostic, and deliberately without any score floor:
a low-confidence box survives if nothing better overlaps it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import iou_matrix
from .formats import AnnotatedImage
from .validation import check_finite

DEFAULT_TOP_K = 100
DEFAULT_IOU_MAX = 0.55


@dataclass
class ScoredBox:
    """A scored, labeled box; coordinates in any consistent unit."""

    box: np.ndarray
    label: int
    score: float

    def __post_init__(self) -> None:
        self.box = np.asarray(self.box, dtype=np.float64).reshape(4)
        check_finite("box", self.box)
        if self.box[2] <= 0 or self.box[3] <= 0:
            raise ValueError("box width and height must be > 0")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if self.label < 0:
            raise ValueError(f"label must be >= 0, got {self.label}")


def filter_predictions(
    boxes: list[ScoredBox],
    top_k: int = DEFAULT_TOP_K,
    iou_max: float = DEFAULT_IOU_MAX,
) -> list[ScoredBox]:
    """Keep the strongest non-overlapping boxes of one image.

    Returns a subset of ``boxes`` (the objects themselves, untouched) in
    rank order. Among mutually overlapping boxes (IoU >= ``iou_max``) only
    the highest ranked survives; ranking ignores labels. Idempotent.
    """
    if top_k < 0:
        raise ValueError(f"top_k must be >= 0, got {top_k}")
    if not 0.0 < iou_max <= 1.0:
        raise ValueError(f"iou_max must lie in (0, 1], got {iou_max}")
    if not boxes or top_k == 0:
        return []

    order = sorted(
        range(len(boxes)),
        key=lambda i: (-boxes[i].score, boxes[i].box[0], boxes[i].box[1]),
    )[:top_k]

    accepted: list[int] = []
    accepted_boxes = np.empty((0, 4))
    for i in order:
        cand = boxes[i].box.reshape(1, 4)
        if accepted and (iou_matrix(cand, accepted_boxes)[0] >= iou_max).any():
            continue
        accepted.append(i)
        accepted_boxes = np.concatenate([accepted_boxes, cand], axis=0)
    return [boxes[i] for i in accepted]


def build_next_training_set(
    images: list[AnnotatedImage],
    top_k: int = DEFAULT_TOP_K,
    iou_max: float = DEFAULT_IOU_MAX,
) -> list[AnnotatedImage]:
    """Apply :func:`filter_predictions` per image of a scored annotated set.

    Every input image must carry scores. Scores are preserved on the output
    so a second pass reproduces it exactly.
    """
    out = []
    for img in images:
        if img.scores is None:
            raise ValueError(f"image {img.image_id!r} has no scores; cannot rank predictions")
        scored = [
            ScoredBox(box=img.boxes[j], label=int(img.labels[j]), score=float(img.scores[j]))
            for j in range(img.boxes.shape[0])
        ]
        kept = filter_predictions(scored, top_k=top_k, iou_max=iou_max)
        out.append(
            AnnotatedImage(
                image_id=img.image_id,
                width=img.width,
                height=img.height,
                boxes=np.array([b.box for b in kept]).reshape(-1, 4),
                labels=np.array([b.label for b in kept], dtype=np.int64),
                scores=np.array([b.score for b in kept], dtype=np.float64),
            )
        )
    return out
