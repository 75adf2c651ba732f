"""Connected components, proposal conversion, and the merge filter."""

import itertools

import numpy as np
import pytest

import pseudobox as pb
from pseudobox.regions import (
    Proposal,
    Region,
    connected_components,
    filter_proposals,
    region_to_proposal,
)
from pseudobox.spectral import ClusterMask


def test_components_partition_the_grid():
    rng = np.random.default_rng(4)
    labels = rng.integers(0, 3, size=(9, 7))
    regions = connected_components(ClusterMask(level=0, n_clusters=3, labels=labels))
    seen = np.zeros_like(labels, dtype=int)
    for region in regions:
        for y, x in region.pixels:
            assert labels[y, x] == region.label
            seen[y, x] += 1
    assert np.all(seen == 1)


def test_components_split_by_4_connectivity():
    # two same-label blocks touching only diagonally stay separate
    labels = np.array(
        [
            [1, 1, 0],
            [1, 1, 0],
            [0, 0, 1],
        ]
    )
    regions = connected_components(ClusterMask(level=0, n_clusters=2, labels=labels))
    ones = [r for r in regions if r.label == 1]
    assert len(ones) == 2
    assert sorted(r.pixels.shape[0] for r in ones) == [1, 4]


def test_components_emitted_in_row_major_order():
    labels = np.array(
        [
            [0, 1],
            [1, 0],
        ]
    )
    regions = connected_components(ClusterMask(level=0, n_clusters=2, labels=labels))
    firsts = [tuple(r.pixels[0]) for r in regions]
    assert firsts == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_single_pixel_region_box():
    region = Region(label=0, pixels=np.array([[0, 0]]), grid_hw=(8, 8))
    level = pb.FeatureMap(level=0, data=np.ones((2, 8, 8), dtype=np.float32))
    prop = region_to_proposal(region, level)
    assert np.array_equal(prop.box, [0.0, 0.0, 0.125, 0.125])


def test_region_box_spans_min_to_max_pixel():
    region = Region(label=0, pixels=np.array([[1, 2], [3, 5]]), grid_hw=(8, 10))
    level = pb.FeatureMap(level=0, data=np.ones((2, 8, 10), dtype=np.float32))
    prop = region_to_proposal(region, level)
    assert np.allclose(prop.box, [2 / 10, 1 / 8, 4 / 10, 3 / 8])


def test_descriptor_is_mean_of_member_pixels():
    u = np.array([1.0, 0.0, 0.0], dtype=np.float32)
    v = np.array([0.0, 1.0, 0.0], dtype=np.float32)
    data = np.zeros((3, 2, 2), dtype=np.float32)
    data[:, 0, 0] = u
    data[:, 0, 1] = v
    level = pb.FeatureMap(level=0, data=data)
    region = Region(label=0, pixels=np.array([[0, 0], [0, 1]]), grid_hw=(2, 2))
    prop = region_to_proposal(region, level)
    assert np.allclose(prop.descriptor, (u + v) / 2.0)


def test_descriptor_pools_from_deepest_level_by_nearest_cell():
    # mask grid 4x4, deepest level 2x2: rows 0-1 read cell row 0, rows 2-3 row 1
    data = np.zeros((2, 2, 2), dtype=np.float32)
    data[:, 0, 0] = [1.0, 0.0]
    data[:, 1, 1] = [0.0, 1.0]
    level = pb.FeatureMap(level=3, data=data)
    region = Region(label=0, pixels=np.array([[0, 0], [3, 3]]), grid_hw=(4, 4))
    prop = region_to_proposal(region, level)
    assert np.allclose(prop.descriptor, [0.5, 0.5])


def test_zero_feature_region_yields_no_proposal():
    region = Region(label=0, pixels=np.array([[0, 0]]), grid_hw=(2, 2))
    level = pb.FeatureMap(level=0, data=np.zeros((2, 2, 2), dtype=np.float32))
    assert region_to_proposal(region, level) is None


def _prop(box, desc):
    return Proposal(box=np.array(box, dtype=float), descriptor=np.array(desc, dtype=float))


def test_filter_drops_tiny_proposals():
    small = _prop([0.0, 0.0, 0.01, 0.05], [1.0, 0.0])  # area 5e-4 < 1e-3
    large = _prop([0.2, 0.2, 0.5, 0.5], [1.0, 0.0])
    kept = filter_proposals([small, large])
    assert len(kept) == 1
    assert np.array_equal(kept[0].box, large.box)


def test_filter_merges_high_overlap_pairs():
    a = _prop([0.1, 0.1, 0.4, 0.4], [1.0, 0.0])
    b = _prop([0.1, 0.1, 0.4, 0.5], [1.0, 0.0])
    kept = filter_proposals([a, b])
    assert len(kept) == 1
    # union of the two boxes
    assert np.allclose(kept[0].box, [0.1, 0.1, 0.4, 0.5])


def test_filter_merges_similar_overlapping_pairs():
    # IoU is small but positive; descriptors are parallel -> merge
    a = _prop([0.0, 0.0, 0.3, 0.3], [2.0, 0.0])
    b = _prop([0.25, 0.25, 0.3, 0.3], [1.0, 0.0])
    kept = filter_proposals([a, b])
    assert len(kept) == 1
    assert np.allclose(kept[0].box, [0.0, 0.0, 0.55, 0.55])


def test_filter_keeps_dissimilar_disjoint_proposals():
    a = _prop([0.0, 0.0, 0.3, 0.3], [1.0, 0.0])
    b = _prop([0.5, 0.5, 0.3, 0.3], [0.0, 1.0])
    kept = filter_proposals([a, b])
    assert len(kept) == 2


def test_filter_weights_descriptors_by_area():
    a = _prop([0.0, 0.0, 0.4, 0.4], [1.0, 0.0])  # area 0.16
    b = _prop([0.0, 0.0, 0.2, 0.2], [0.0, 1.0])  # area 0.04, contained; IoU 0.25
    kept = filter_proposals([a, b], sim_merge=-1.0)  # force the similarity arm open
    assert len(kept) == 1
    merged = kept[0].descriptor
    assert np.allclose(merged, [0.16 / 0.20, 0.04 / 0.20])


def test_filter_is_order_independent_for_identical_boxes():
    props = [
        _prop([0.2, 0.2, 0.3, 0.3], [1.0, 0.0]),
        _prop([0.2, 0.2, 0.3, 0.3], [1.0, 0.0]),
        _prop([0.2, 0.2, 0.3, 0.3], [1.0, 0.0]),
    ]
    for perm in itertools.permutations(props):
        kept = filter_proposals(list(perm))
        assert len(kept) == 1
        assert np.allclose(kept[0].box, [0.2, 0.2, 0.3, 0.3])
        assert np.allclose(kept[0].descriptor, [1.0, 0.0])


def test_filter_is_idempotent():
    rng = np.random.default_rng(17)
    props = []
    for _ in range(12):
        x, y = rng.uniform(0, 0.6, 2)
        w, h = rng.uniform(0.05, 0.4, 2)
        w = min(w, 1 - x)
        h = min(h, 1 - y)
        props.append(_prop([x, y, w, h], rng.normal(size=3)))
    once = filter_proposals(props)
    twice = filter_proposals(once)
    assert len(once) == len(twice)
    for p, q in zip(once, twice):
        assert np.array_equal(p.box, q.box)
        assert np.array_equal(p.descriptor, q.descriptor)


def test_filter_drops_pairs_whose_merge_cancels():
    # opposite descriptors on identical boxes: the merged vector is zero,
    # which cannot describe anything -> both disappear
    a = _prop([0.1, 0.1, 0.2, 0.2], [1.0, 0.0])
    b = _prop([0.1, 0.1, 0.2, 0.2], [-1.0, 0.0])
    assert filter_proposals([a, b]) == []


def test_proposal_validation():
    with pytest.raises(ValueError):
        _prop([0.0, 0.0, 0.0, 0.2], [1.0])  # zero width
    with pytest.raises(ValueError):
        _prop([0.9, 0.0, 0.2, 0.2], [1.0])  # exits the unit square
    with pytest.raises(ValueError):
        _prop([0.0, 0.0, 0.2, 0.2], [0.0, 0.0])  # zero descriptor
