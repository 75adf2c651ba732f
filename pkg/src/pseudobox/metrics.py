"""Proposal recall and pseudo-label quality metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import iou_matrix
from .formats import AnnotatedImage

# canonical doubles for 0.50, 0.55, ..., 0.95
DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
DEFAULT_K = 100


@dataclass
class EvalReport:
    """Evaluation summary; ``acc`` and ``purity`` are None when prediction
    and ground-truth boxes do not identity-match."""

    ar_at_k: dict[int, float]
    per_image_recall: dict[str, float] = field(default_factory=dict)
    acc: float | None = None
    purity: float | None = None

    def to_dict(self) -> dict:
        out = {
            "ar_at_k": {str(k): v for k, v in self.ar_at_k.items()},
            "per_image_recall": self.per_image_recall,
        }
        if self.acc is not None:
            out["acc"] = self.acc
        if self.purity is not None:
            out["purity"] = self.purity
        return out


def _pair_by_image(gt: list[AnnotatedImage], pred: list[AnnotatedImage]):
    gt_by_id = {img.image_id: img for img in gt}
    pred_by_id = {img.image_id: img for img in pred}
    if set(gt_by_id) != set(pred_by_id):
        missing = set(gt_by_id) ^ set(pred_by_id)
        raise ValueError(f"image id sets differ between ground truth and predictions: {sorted(missing)[:5]}")
    return [(img, pred_by_id[img.image_id]) for img in gt]


def _image_recall(gt_img: AnnotatedImage, pred_img: AnnotatedImage, k: int, thresholds) -> float:
    """Mean greedy recall over IoU thresholds for one image (>= 1 gt box)."""
    n_gt = gt_img.boxes.shape[0]
    boxes = pred_img.boxes
    if pred_img.scores is not None and boxes.shape[0]:
        order = np.argsort(-pred_img.scores, kind="stable")
        boxes = boxes[order]
    boxes = boxes[:k]
    if boxes.shape[0] == 0:
        return 0.0
    iou = iou_matrix(boxes, gt_img.boxes)
    recalls = []
    for t in thresholds:
        matched = np.zeros(n_gt, dtype=bool)
        for row in iou:
            masked = np.where(matched, -1.0, row)
            j = int(np.argmax(masked))
            if masked[j] >= t:
                matched[j] = True
        recalls.append(matched.sum() / n_gt)
    return float(np.mean(recalls))


def average_recall(
    gt: list[AnnotatedImage],
    predictions: list[AnnotatedImage],
    k: int = DEFAULT_K,
    iou_thresholds=DEFAULT_IOU_THRESHOLDS,
) -> float:
    """Class-agnostic average recall at ``k`` proposals per image.

    For each image with at least one ground-truth box, proposals (score
    order when scored, given order otherwise, truncated to ``k``) greedily
    claim the unmatched ground-truth box of highest IoU at each threshold;
    recall is averaged over thresholds, then over those images. Images
    without ground truth are ignored; with no ground truth at all the
    result is 0.0.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    per_image = []
    for gt_img, pred_img in _pair_by_image(gt, predictions):
        if gt_img.boxes.shape[0] == 0:
            continue
        per_image.append(_image_recall(gt_img, pred_img, k, iou_thresholds))
    return float(np.mean(per_image)) if per_image else 0.0


def evaluate_proposals(
    gt: list[AnnotatedImage],
    predictions: list[AnnotatedImage],
    k: int = DEFAULT_K,
    iou_thresholds=DEFAULT_IOU_THRESHOLDS,
) -> EvalReport:
    """Full evaluation: AR@k, per-image recall, and label metrics when the
    prediction boxes identity-match the ground truth."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    pairs = _pair_by_image(gt, predictions)
    per_image: dict[str, float] = {}
    values = []
    for gt_img, pred_img in pairs:
        if gt_img.boxes.shape[0] == 0:
            continue
        r = _image_recall(gt_img, pred_img, k, iou_thresholds)
        per_image[gt_img.image_id] = r
        values.append(r)
    ar = float(np.mean(values)) if values else 0.0

    identity = all(np.array_equal(g.boxes, p.boxes) for g, p in pairs)
    acc = purity = None
    if identity and any(g.boxes.shape[0] for g, _ in pairs):
        gt_labels = np.concatenate([g.labels for g, _ in pairs])
        pred_labels = np.concatenate([p.labels for _, p in pairs])
        acc = pseudo_label_accuracy_from_labels(pred_labels, gt_labels)
        purity = cluster_purity(pred_labels, gt_labels)
    return EvalReport(ar_at_k={k: ar}, per_image_recall=per_image, acc=acc, purity=purity)


def pseudo_label_accuracy(
    predictions: list[AnnotatedImage], gt: list[AnnotatedImage]
) -> float:
    """Fraction of identically positioned boxes with matching labels.

    Requires prediction boxes to be exactly the ground-truth boxes, image
    by image (label metrics are only meaningful on identical box sets).
    """
    pairs = _pair_by_image(gt, predictions)
    for g, p in pairs:
        if not np.array_equal(g.boxes, p.boxes):
            raise ValueError(f"image {g.image_id!r}: boxes differ; labels cannot be compared")
    total = sum(g.boxes.shape[0] for g, _ in pairs)
    if total == 0:
        raise ValueError("no boxes to compare")
    gt_labels = np.concatenate([g.labels for g, _ in pairs])
    pred_labels = np.concatenate([p.labels for _, p in pairs])
    return pseudo_label_accuracy_from_labels(pred_labels, gt_labels)


def pseudo_label_accuracy_from_labels(pred_labels: np.ndarray, gt_labels: np.ndarray) -> float:
    pred_labels = np.asarray(pred_labels).reshape(-1)
    gt_labels = np.asarray(gt_labels).reshape(-1)
    if pred_labels.shape != gt_labels.shape:
        raise ValueError("label arrays must have identical shape")
    if pred_labels.size == 0:
        raise ValueError("no labels to compare")
    return float((pred_labels == gt_labels).mean())


def cluster_purity(labels: np.ndarray, true_classes: np.ndarray) -> float:
    """Purity of a clustering against reference classes, in (0, 1].

    Each cluster votes for its most common reference class; purity is the
    fraction of points covered by those votes.
    """
    labels = np.asarray(labels).reshape(-1)
    true_classes = np.asarray(true_classes).reshape(-1)
    if labels.shape != true_classes.shape:
        raise ValueError("labels and true_classes must have identical shape")
    if labels.size == 0:
        raise ValueError("purity of an empty labeling is undefined")
    total = 0
    for c in np.unique(labels):
        _, counts = np.unique(true_classes[labels == c], return_counts=True)
        total += int(counts.max())
    return total / labels.size
