"""Box geometry primitives."""

import numpy as np

import pseudobox as pb
from pseudobox.boxes import box_giou, box_iou, giou_matrix, iou_matrix, xywh_to_cxcywh


def test_iou_unit_overlap_case():
    # overlap 1, union 7 (verified against cell rasterization)
    assert abs(box_iou((0, 0, 2, 2), (1, 1, 2, 2)) - 1.0 / 7.0) < 1e-15


def test_iou_disjoint_and_identical():
    assert box_iou((0, 0, 1, 1), (5, 5, 1, 1)) == 0.0
    assert box_iou((2, 3, 4, 5), (2, 3, 4, 5)) == 1.0


def test_giou_disjoint_case():
    # enclosing box area 3, union 2 -> 0 - 1/3
    assert abs(box_giou((0, 0, 1, 1), (2, 0, 1, 1)) - (-1.0 / 3.0)) < 1e-15


def test_giou_equals_iou_when_enclosure_is_tight():
    # identical boxes enclose themselves exactly
    assert box_giou((1, 1, 2, 2), (1, 1, 2, 2)) == 1.0


def test_giou_never_exceeds_iou():
    rng = np.random.default_rng(5)
    for _ in range(200):
        a = (rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0.1, 5), rng.uniform(0.1, 5))
        b = (rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0.1, 5), rng.uniform(0.1, 5))
        giou = box_giou(a, b)
        iou = box_iou(a, b)
        assert giou <= iou + 1e-12
        assert -1.0 - 1e-12 <= giou <= 1.0 + 1e-12


def test_matrix_forms_match_scalar_forms():
    rng = np.random.default_rng(11)
    a = np.column_stack(
        [rng.uniform(0, 5, 7), rng.uniform(0, 5, 7), rng.uniform(0.1, 4, 7), rng.uniform(0.1, 4, 7)]
    )
    b = np.column_stack(
        [rng.uniform(0, 5, 4), rng.uniform(0, 5, 4), rng.uniform(0.1, 4, 4), rng.uniform(0.1, 4, 4)]
    )
    ious = iou_matrix(a, b)
    gious = giou_matrix(a, b)
    assert ious.shape == (7, 4)
    for i in range(7):
        for j in range(4):
            assert abs(ious[i, j] - box_iou(a[i], b[j])) < 1e-12
            assert abs(gious[i, j] - box_giou(a[i], b[j])) < 1e-12


def test_empty_matrix_arguments():
    empty = np.empty((0, 4))
    boxes = np.array([[0.0, 0.0, 1.0, 1.0]])
    assert iou_matrix(empty, boxes).shape == (0, 1)
    assert iou_matrix(boxes, empty).shape == (1, 0)


def test_xywh_to_cxcywh():
    out = xywh_to_cxcywh(np.array([[2.0, 4.0, 6.0, 8.0]]))
    assert np.allclose(out, [[5.0, 8.0, 6.0, 8.0]])
    # and the original array is untouched
    box = np.array([[0.0, 0.0, 2.0, 2.0]])
    xywh_to_cxcywh(box)
    assert box[0, 0] == 0.0
