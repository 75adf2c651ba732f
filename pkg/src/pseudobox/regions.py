"""From cluster masks to box proposals.

Masks are cut into 4-connected regions per label value; each region becomes
a proposal carrying its grid-tight bounding box (normalized by the source
grid) and a descriptor pooled from the deepest feature map. Per-image
proposals are then deduplicated by a greedy merge on box overlap and
descriptor similarity.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .boxes import iou_matrix
from .formats import FeatureMap
from .spectral import ClusterMask
from .validation import check_finite

DEFAULT_IOU_MERGE = 0.75
DEFAULT_SIM_MERGE = 0.90
DEFAULT_MIN_REL_AREA = 0.001


@dataclass
class Region:
    """A 4-connected set of same-label pixels on one mask grid."""

    label: int
    pixels: np.ndarray  # (n, 2) int (y, x)
    grid_hw: tuple[int, int]

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        if self.pixels.shape[0] < 1:
            raise ValueError("region must contain at least one pixel")


@dataclass
class Proposal:
    """A candidate object: normalized (x, y, w, h) box plus pooled descriptor."""

    box: np.ndarray
    descriptor: np.ndarray

    def __post_init__(self) -> None:
        self.box = np.asarray(self.box, dtype=np.float64).reshape(4)
        self.descriptor = np.asarray(self.descriptor, dtype=np.float64).reshape(-1)
        check_finite("proposal box", self.box)
        check_finite("proposal descriptor", self.descriptor)
        x, y, w, h = self.box
        if w <= 0 or h <= 0:
            raise ValueError("proposal box must have positive extent")
        if x < 0 or y < 0 or x + w > 1 + 1e-12 or y + h > 1 + 1e-12:
            raise ValueError("proposal box must lie inside the unit square")
        if not np.linalg.norm(self.descriptor) > 0:
            raise ValueError("proposal descriptor must have positive norm")

    @property
    def area(self) -> float:
        return float(self.box[2] * self.box[3])


def connected_components(mask: ClusterMask) -> list[Region]:
    """Split a label grid into 4-connected regions, one per component.

    Regions are emitted in row-major order of their first-seen pixel, and
    pixels within a region are listed in BFS order from that pixel, so the
    output is a pure function of the grid. The union of all regions is a
    partition of the grid.
    """
    labels = mask.labels
    h, w = labels.shape
    seen = np.zeros((h, w), dtype=bool)
    regions = []
    for sy in range(h):
        for sx in range(w):
            if seen[sy, sx]:
                continue
            value = labels[sy, sx]
            queue = deque([(sy, sx)])
            seen[sy, sx] = True
            pix = []
            while queue:
                y, x = queue.popleft()
                pix.append((y, x))
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < h and 0 <= nx < w and not seen[ny, nx] and labels[ny, nx] == value:
                        seen[ny, nx] = True
                        queue.append((ny, nx))
            regions.append(Region(label=int(value), pixels=np.array(pix), grid_hw=(h, w)))
    return regions


def region_to_proposal(region: Region, last_level: FeatureMap) -> Proposal | None:
    """Turn a region into a proposal, pooling its descriptor from ``last_level``.

    The box is the tight bounding box of the region's pixels on its source
    grid, normalized so pixel (y, x) spans [x/W, (x+1)/W] x [y/H, (y+1)/H].
    The descriptor is the mean of the deepest map's vectors at each region
    pixel, mapped between grids by nearest neighbor. Returns None when the
    pooled descriptor has zero norm (nothing to describe).
    """
    gh, gw = region.grid_hw
    ys = region.pixels[:, 0]
    xs = region.pixels[:, 1]
    x0 = xs.min() / gw
    y0 = ys.min() / gh
    x1 = (xs.max() + 1) / gw
    y1 = (ys.max() + 1) / gh

    lh, lw = last_level.height, last_level.width
    my = np.minimum((((ys + 0.5) * lh) / gh).astype(np.int64), lh - 1)
    mx = np.minimum((((xs + 0.5) * lw) / gw).astype(np.int64), lw - 1)
    descriptor = last_level.data[:, my, mx].mean(axis=1, dtype=np.float64)
    if not np.linalg.norm(descriptor) > 0:
        return None
    return Proposal(box=np.array([x0, y0, x1 - x0, y1 - y0]), descriptor=descriptor)


def filter_proposals(
    proposals: list[Proposal],
    iou_merge: float = DEFAULT_IOU_MERGE,
    sim_merge: float = DEFAULT_SIM_MERGE,
    min_rel_area: float = DEFAULT_MIN_REL_AREA,
) -> list[Proposal]:
    """Drop tiny proposals, then greedily merge near-duplicates.

    A pair merges when IoU >= ``iou_merge``, or when the boxes overlap at
    all and their descriptors' cosine similarity is >= ``sim_merge``. Each
    round merges the qualifying pair with the highest IoU (ties: lowest
    (i, j)); the merged proposal keeps the union box and the area-weighted
    mean descriptor. The result is a fixed point: running the filter on its
    own output returns it unchanged.
    """
    kept = [p for p in proposals if p.area >= min_rel_area]
    if len(kept) < 2:
        return kept
    boxes = np.stack([p.box for p in kept])
    descs = np.stack([p.descriptor for p in kept])

    while boxes.shape[0] >= 2:
        iou = iou_matrix(boxes, boxes)
        n = iou.shape[0]
        upper = np.triu(np.ones((n, n), dtype=bool), k=1)
        unit = descs / np.linalg.norm(descs, axis=1, keepdims=True)
        cos = unit @ unit.T
        qualifies = upper & ((iou >= iou_merge) | ((iou > 0) & (cos >= sim_merge)))
        if not qualifies.any():
            break
        cand = np.where(qualifies, iou, -np.inf)
        flat = int(np.argmax(cand))  # row-major argmax = highest IoU, ties to lowest (i, j)
        i, j = divmod(flat, n)

        bi, bj = boxes[i], boxes[j]
        x0 = min(bi[0], bj[0])
        y0 = min(bi[1], bj[1])
        x1 = max(bi[0] + bi[2], bj[0] + bj[2])
        y1 = max(bi[1] + bi[3], bj[1] + bj[3])
        ai = bi[2] * bi[3]
        aj = bj[2] * bj[3]
        merged_desc = (ai * descs[i] + aj * descs[j]) / (ai + aj)
        drop = [j]
        if np.linalg.norm(merged_desc) > 0:
            boxes[i] = (x0, y0, x1 - x0, y1 - y0)
            descs[i] = merged_desc
        else:
            drop.append(i)  # descriptors cancelled out; nothing left to describe
        boxes = np.delete(boxes, drop, axis=0)
        descs = np.delete(descs, drop, axis=0)

    return [Proposal(box=boxes[i].copy(), descriptor=descs[i].copy()) for i in range(boxes.shape[0])]
