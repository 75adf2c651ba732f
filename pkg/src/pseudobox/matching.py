"""Set-based detection loss with optimal one-to-one assignment.

Predictions (a fixed number Q of box-plus-logits slots) are matched to
ground-truth boxes padded with explicit no-object slots so the assignment
is a Q-to-Q permutation. The permutation minimizes a pairwise cost made of
a class agreement term and, for real ground truth, weighted L1 (on center
form boxes) and generalized-IoU terms. The reported loss is the negative
log likelihood of each slot's assigned class (no-object term down-weighted)
plus the same box terms under that assignment.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .boxes import giou_matrix, xywh_to_cxcywh
from .validation import check_boxes, check_finite

DEFAULT_L1_WEIGHT = 5.0
DEFAULT_GIOU_WEIGHT = 2.0
DEFAULT_EOS_WEIGHT = 0.1


@dataclass
class Prediction:
    """One output slot: a normalized (x, y, w, h) box and C+1 class logits."""

    box: np.ndarray
    logits: np.ndarray

    def __post_init__(self) -> None:
        self.box = check_boxes(np.asarray(self.box).reshape(1, 4), "prediction box", unit=True)[0]
        self.logits = np.asarray(self.logits, dtype=np.float64).reshape(-1)
        if self.logits.size < 2:
            raise ValueError("logits must cover at least one class plus the no-object class")
        check_finite("logits", self.logits)


@dataclass
class MatchWeights:
    """Loss/cost coefficients. ``class_term`` picks the matching-cost class
    term: negative probability ("prob") or negative log probability
    ("logprob"); the reported loss always uses the log form."""

    l1: float = DEFAULT_L1_WEIGHT
    giou: float = DEFAULT_GIOU_WEIGHT
    eos: float = DEFAULT_EOS_WEIGHT
    class_term: str = "prob"

    def __post_init__(self) -> None:
        if self.class_term not in ("prob", "logprob"):
            raise ValueError(f"class_term must be 'prob' or 'logprob', got {self.class_term!r}")


@dataclass
class MatchResult:
    """Assignment (prediction slot -> ground-truth slot) and loss terms."""

    assignment: np.ndarray
    total_loss: float
    class_loss: float
    box_l1: float
    box_giou: float


def hungarian_match(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect assignment on a square cost matrix.

    Shortest-augmenting-path implementation with potentials, O(n^3).
    Returns ``assignment`` with ``assignment[i] = j`` meaning row i takes
    column j; the total cost over the assignment is minimal. Exact for any
    finite matrix.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost must be square, got shape {cost.shape}")
    check_finite("cost", cost)
    n = cost.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)

    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match_row = np.zeros(n + 1, dtype=np.int64)  # column j -> row (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match_row[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match_row[j0]
            cur = cost[i0 - 1, :] - u[i0] - v[1:]
            better = ~used[1:] & (cur < minv[1:])
            if better.any():
                minv[1:][better] = cur[better]
                way[1:][better] = j0
            masked = np.where(used[1:], np.inf, minv[1:])
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            used_cols = np.flatnonzero(used)
            u[match_row[used_cols]] += delta
            v[used_cols] -= delta
            free_cols = np.flatnonzero(~used)
            minv[free_cols] -= delta
            j0 = j1
            if match_row[j0] == 0:
                break
        while j0:
            j_prev = way[j0]
            match_row[j0] = match_row[j_prev]
            j0 = j_prev

    assignment = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        assignment[match_row[j] - 1] = j - 1
    return assignment


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def detection_loss(
    predictions: list[Prediction],
    gt_boxes: np.ndarray,
    gt_labels: np.ndarray,
    weights: MatchWeights | None = None,
) -> MatchResult:
    """Match predictions to padded ground truth and evaluate the set loss.

    ``gt_boxes`` is (n, 4) normalized (x, y, w, h) with ``n <= Q``; slots
    beyond n are no-object. ``gt_labels`` holds class ids in [0, C) where C
    is inferred from the logits width (C + 1). Returns the assignment and
    the loss split into class, L1, and generalized-IoU parts; the parts sum
    exactly to the total.
    """
    weights = weights or MatchWeights()
    if not predictions:
        raise ValueError("at least one prediction slot is required")
    q = len(predictions)
    logits = np.stack([p.logits for p in predictions])
    if np.unique([p.logits.size for p in predictions]).size != 1:
        raise ValueError("all predictions must share the same logits width")
    n_classes = logits.shape[1] - 1
    pred_boxes = np.stack([p.box for p in predictions])

    gt_boxes = check_boxes(gt_boxes, "gt_boxes", unit=True)
    gt_labels = np.asarray(gt_labels, dtype=np.int64).reshape(-1)
    n_gt = gt_boxes.shape[0]
    if gt_labels.shape[0] != n_gt:
        raise ValueError(f"{n_gt} gt boxes but {gt_labels.shape[0]} labels")
    if n_gt > q:
        raise ValueError(f"{n_gt} ground-truth boxes exceed the {q} prediction slots")
    if n_gt and (gt_labels.min() < 0 or gt_labels.max() >= n_classes):
        raise ValueError(f"gt labels must lie in [0, {n_classes})")

    # padded class per gt slot; index n_classes is the no-object class
    slot_class = np.full(q, n_classes, dtype=np.int64)
    slot_class[:n_gt] = gt_labels
    slot_w = np.where(slot_class == n_classes, weights.eos, 1.0)

    log_p = _log_softmax(logits)
    if weights.class_term == "prob":
        class_cost = -np.exp(log_p)[:, slot_class]
    else:
        class_cost = -log_p[:, slot_class]
    cost = class_cost * slot_w[None, :]
    if n_gt:
        cx_pred = xywh_to_cxcywh(pred_boxes)
        cx_gt = xywh_to_cxcywh(gt_boxes)
        l1 = np.abs(cx_pred[:, None, :] - cx_gt[None, :, :]).sum(axis=2)
        giou = giou_matrix(pred_boxes, gt_boxes)
        cost[:, :n_gt] += weights.l1 * l1 + weights.giou * (1.0 - giou)

    assignment = hungarian_match(cost)

    rows = np.arange(q)
    assigned_class = slot_class[assignment]
    class_loss = float((-log_p[rows, assigned_class] * slot_w[assignment]).sum())
    box_l1 = 0.0
    box_giou = 0.0
    if n_gt:
        real = assignment < n_gt  # the bijection covers every real slot
        box_l1 = float(weights.l1 * l1[rows[real], assignment[real]].sum())
        box_giou = float(weights.giou * (1.0 - giou[rows[real], assignment[real]]).sum())
    total = class_loss + box_l1 + box_giou
    return MatchResult(
        assignment=assignment,
        total_loss=total,
        class_loss=class_loss,
        box_l1=box_l1,
        box_giou=box_giou,
    )


def min_permutation_loss(
    predictions: list[Prediction],
    gt_boxes: np.ndarray,
    gt_labels: np.ndarray,
    weights: MatchWeights | None = None,
) -> float:
    """Exhaustive minimum of the reported loss over every assignment.

    Exponential in Q; intended as a runtime cross-check on small instances.
    Only meaningful against :func:`detection_loss` when ``class_term`` is
    "logprob", where the matching cost coincides with the loss termwise.
    """
    weights = weights or MatchWeights()
    q = len(predictions)
    logits = np.stack([p.logits for p in predictions])
    pred_boxes = np.stack([p.box for p in predictions])
    gt_boxes = check_boxes(gt_boxes, "gt_boxes", unit=True)
    gt_labels = np.asarray(gt_labels, dtype=np.int64).reshape(-1)
    n_gt = gt_boxes.shape[0]
    n_classes = logits.shape[1] - 1

    slot_class = np.full(q, n_classes, dtype=np.int64)
    slot_class[:n_gt] = gt_labels
    slot_w = np.where(slot_class == n_classes, weights.eos, 1.0)
    log_p = _log_softmax(logits)
    pair = (-log_p[:, slot_class]) * slot_w[None, :]
    if n_gt:
        l1 = np.abs(xywh_to_cxcywh(pred_boxes)[:, None, :] - xywh_to_cxcywh(gt_boxes)[None, :, :]).sum(axis=2)
        giou = giou_matrix(pred_boxes, gt_boxes)
        pair[:, :n_gt] += weights.l1 * l1 + weights.giou * (1.0 - giou)

    rows = np.arange(q)
    best = np.inf
    for perm in itertools.permutations(range(q)):
        best = min(best, float(pair[rows, list(perm)].sum()))
    return best
