"""Bipartite assignment and the set-matched detection loss."""

import itertools

import numpy as np
import pytest
import scipy.optimize
import scipy.special

import pseudobox as pb
from pseudobox.matching import (
    MatchWeights,
    Prediction,
    detection_loss,
    hungarian_match,
    min_permutation_loss,
)


def test_worked_three_by_three_assignment():
    cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    assign = hungarian_match(cost)
    assert np.array_equal(assign, [1, 0, 2])
    assert cost[np.arange(3), assign].sum() == 5.0


def test_assignment_matches_reference_solver():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 10))
        cost = rng.normal(size=(n, n)) * rng.uniform(0.1, 50)
        ours = hungarian_match(cost)
        rows, cols = scipy.optimize.linear_sum_assignment(cost)
        assert np.array_equal(np.sort(ours), np.arange(n))  # a permutation
        assert abs(cost[np.arange(n), ours].sum() - cost[rows, cols].sum()) < 1e-9


def test_assignment_matches_exhaustive_search():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(1, 7))
        cost = rng.uniform(-10, 10, size=(n, n))
        ours = cost[np.arange(n), hungarian_match(cost)].sum()
        best = min(
            sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n))
        )
        assert abs(ours - best) < 1e-9


def test_hungarian_input_validation():
    assert hungarian_match(np.empty((0, 0))).size == 0
    with pytest.raises(ValueError):
        hungarian_match(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        hungarian_match(np.array([[np.inf]]))


def _random_instance(rng, q=None, n_gt=None, n_classes=4):
    q = q if q is not None else int(rng.integers(1, 7))
    n_gt = n_gt if n_gt is not None else int(rng.integers(0, q + 1))
    preds = []
    for _ in range(q):
        x, y = rng.uniform(0, 0.5, 2)
        w, h = rng.uniform(0.05, 0.45, 2)
        preds.append(
            Prediction(box=np.array([x, y, w, h]), logits=rng.normal(size=n_classes + 1))
        )
    gt_boxes = np.empty((n_gt, 4))
    for j in range(n_gt):
        x, y = rng.uniform(0, 0.5, 2)
        w, h = rng.uniform(0.05, 0.45, 2)
        gt_boxes[j] = [x, y, w, h]
    gt_labels = rng.integers(0, n_classes, size=n_gt)
    return preds, gt_boxes, gt_labels


def test_loss_terms_sum_to_total():
    rng = np.random.default_rng(2)
    for _ in range(100):
        preds, gt_boxes, gt_labels = _random_instance(rng)
        result = detection_loss(preds, gt_boxes, gt_labels)
        assert abs(result.total_loss - (result.class_loss + result.box_l1 + result.box_giou)) <= 1e-9
        assert result.total_loss >= 0.0
        assert np.array_equal(np.sort(result.assignment), np.arange(len(preds)))


def test_loss_is_invariant_to_prediction_order():
    rng = np.random.default_rng(3)
    for _ in range(30):
        preds, gt_boxes, gt_labels = _random_instance(rng, q=5)
        base = detection_loss(preds, gt_boxes, gt_labels)
        perm = list(rng.permutation(5))
        shuffled = detection_loss([preds[i] for i in perm], gt_boxes, gt_labels)
        assert abs(base.total_loss - shuffled.total_loss) < 1e-9


def test_no_object_only_loss_matches_log_softmax():
    """With zero ground truth every slot pays its no-object log-likelihood."""
    rng = np.random.default_rng(7)
    q, n_classes = 4, 5
    logits = rng.normal(size=(q, n_classes + 1))
    preds = [
        Prediction(box=np.array([0.1, 0.1, 0.2, 0.2]), logits=logits[i]) for i in range(q)
    ]
    empty = np.empty((0, 4))
    labels = np.empty(0, dtype=np.int64)

    expected = float(-scipy.special.log_softmax(logits, axis=1)[:, n_classes].sum())
    full = detection_loss(preds, empty, labels, weights=MatchWeights(eos=1.0))
    assert abs(full.total_loss - expected) < 1e-12
    assert full.box_l1 == 0.0 and full.box_giou == 0.0

    # the default down-weights the no-object slots by exactly 0.1
    down = detection_loss(preds, empty, labels)
    assert abs(down.total_loss - 0.1 * expected) < 1e-12


def test_matched_slots_pay_full_class_weight():
    rng = np.random.default_rng(8)
    preds, gt_boxes, gt_labels = _random_instance(rng, q=3, n_gt=3)
    result = detection_loss(preds, gt_boxes, gt_labels)
    # all slots matched to real boxes: no eos down-weighting anywhere
    logits = np.stack([p.logits for p in preds])
    log_p = scipy.special.log_softmax(logits, axis=1)
    expected_class = -sum(
        log_p[i, gt_labels[result.assignment[i]]] for i in range(3)
    )
    assert abs(result.class_loss - expected_class) < 1e-12


def test_log_form_matching_agrees_with_exhaustive_minimum():
    rng = np.random.default_rng(4)
    weights = MatchWeights(class_term="logprob")
    for _ in range(50):
        preds, gt_boxes, gt_labels = _random_instance(rng, q=int(rng.integers(1, 6)))
        result = detection_loss(preds, gt_boxes, gt_labels, weights=weights)
        brute = min_permutation_loss(preds, gt_boxes, gt_labels, weights=weights)
        assert abs(result.total_loss - brute) <= 1e-9


def test_too_many_ground_truth_boxes_raises():
    rng = np.random.default_rng(5)
    preds, _, _ = _random_instance(rng, q=2, n_gt=0)
    gt_boxes = np.array([[0.1, 0.1, 0.2, 0.2]] * 3)
    gt_labels = np.array([0, 1, 2])
    with pytest.raises(ValueError):
        detection_loss(preds, gt_boxes, gt_labels)


def test_gt_label_range_is_checked():
    rng = np.random.default_rng(6)
    preds, gt_boxes, _ = _random_instance(rng, q=2, n_gt=1)
    with pytest.raises(ValueError):
        detection_loss(preds, gt_boxes, np.array([9]))


def test_class_term_choices():
    with pytest.raises(ValueError):
        MatchWeights(class_term="squared")
    assert MatchWeights().class_term == "prob"
    assert MatchWeights().l1 == 5.0
    assert MatchWeights().giou == 2.0
    assert MatchWeights().eos == 0.1


def test_predictions_must_share_logit_width():
    preds = [
        Prediction(box=np.array([0.1, 0.1, 0.2, 0.2]), logits=np.zeros(3)),
        Prediction(box=np.array([0.1, 0.1, 0.2, 0.2]), logits=np.zeros(4)),
    ]
    with pytest.raises(ValueError):
        detection_loss(preds, np.empty((0, 4)), np.empty(0, dtype=np.int64))
