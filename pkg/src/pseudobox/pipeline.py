"""End-to-end proposal extraction and pseudo-label training-set assembly.

Per image: spectral masks over the chosen (level, cluster count) grid,
4-connected regions, descriptor-pooled proposals, then the greedy merge.
Dataset-wide: pool every surviving descriptor (L2-normalized), fit the
seeded K-Means, assign each proposal a pseudo-class, and emit a COCO-style
training set. All stages are deterministic for a fixed seed, regardless of
worker-thread count or image order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .formats import AnnotatedImage, FeatureStack, read_feature_stack
from .kmeans import DEFAULT_N_CLUSTERS, PseudoLabelModel, kmeans_assign, kmeans_fit
from .regions import (
    DEFAULT_IOU_MERGE,
    DEFAULT_MIN_REL_AREA,
    DEFAULT_SIM_MERGE,
    Proposal,
    connected_components,
    filter_proposals,
    region_to_proposal,
)
from .spectral import (
    DEFAULT_CLUSTER_COUNTS,
    DEFAULT_KNN,
    DEFAULT_PIXEL_CAP,
    DEFAULT_RESTARTS,
    cluster_stack,
)
from .validation import l2_normalize_rows


@dataclass
class ExtractionStats:
    images: int = 0
    raw_regions: int = 0
    proposals: int = 0
    failures: list[tuple[str, str]] = field(default_factory=list)

    @property
    def mean_proposals_per_image(self) -> float:
        return self.proposals / self.images if self.images else 0.0


class ProposalExtractor(BaseEstimator, TransformerMixin):
    """Stateless transformer: feature stacks in, per-image proposals out.

    Parameters mirror the clustering and merge stages; ``levels=None``
    means the deepest two levels available in each stack.
    """

    def __init__(
        self,
        levels: list[int] | None = None,
        cluster_counts: tuple[int, ...] = DEFAULT_CLUSTER_COUNTS,
        knn: int = DEFAULT_KNN,
        iou_merge: float = DEFAULT_IOU_MERGE,
        sim_merge: float = DEFAULT_SIM_MERGE,
        min_rel_area: float = DEFAULT_MIN_REL_AREA,
        seed: int = 0,
        pixel_cap: int = DEFAULT_PIXEL_CAP,
        restarts: int = DEFAULT_RESTARTS,
    ):
        self.levels = levels
        self.cluster_counts = cluster_counts
        self.knn = knn
        self.iou_merge = iou_merge
        self.sim_merge = sim_merge
        self.min_rel_area = min_rel_area
        self.seed = seed
        self.pixel_cap = pixel_cap
        self.restarts = restarts

    def fit(self, X=None, y=None):
        return self

    def extract(self, stack: FeatureStack) -> list[Proposal]:
        proposals, _ = self.extract_with_stats(stack)
        return proposals

    def extract_with_stats(self, stack: FeatureStack) -> tuple[list[Proposal], int]:
        """Proposals for one stack plus the raw (pre-merge) region count."""
        masks = cluster_stack(
            stack,
            levels=self.levels,
            cluster_counts=tuple(self.cluster_counts),
            knn=self.knn,
            seed=self.seed,
            pixel_cap=self.pixel_cap,
            restarts=self.restarts,
        )
        last = stack.last_level
        raw: list[Proposal] = []
        n_regions = 0
        for mask in masks:
            for region in connected_components(mask):
                n_regions += 1
                prop = region_to_proposal(region, last)
                if prop is not None:
                    raw.append(prop)
        merged = filter_proposals(
            raw,
            iou_merge=self.iou_merge,
            sim_merge=self.sim_merge,
            min_rel_area=self.min_rel_area,
        )
        return merged, n_regions

    def transform(self, X) -> list[list[Proposal]]:
        return [self.extract(stack) for stack in X]


def build_training_set(
    per_image: list[tuple[str, tuple[int, int], list[Proposal]]],
    model: PseudoLabelModel,
    normalize: bool = True,
) -> list[AnnotatedImage]:
    """Assign pseudo-classes and convert proposals to pixel annotations.

    ``per_image`` holds (image_id, (width, height), proposals) triples; the
    canvas converts each normalized box to absolute pixels. ``normalize``
    must match what the model was fitted on (the pipeline fits on
    L2-normalized descriptors).
    """
    out = []
    for image_id, (width, height), proposals in per_image:
        if proposals:
            desc = np.stack([p.descriptor for p in proposals])
            if normalize:
                desc = l2_normalize_rows(desc)
            labels = kmeans_assign(model, desc)
            boxes = np.stack([p.box for p in proposals]).astype(np.float64)
            boxes[:, 0] *= width
            boxes[:, 2] *= width
            boxes[:, 1] *= height
            boxes[:, 3] *= height
            # guard against float drift pushing x+w a hair past the canvas
            boxes[:, 2] = np.minimum(boxes[:, 2], width - boxes[:, 0])
            boxes[:, 3] = np.minimum(boxes[:, 3], height - boxes[:, 1])
        else:
            boxes = np.empty((0, 4))
            labels = np.empty(0, dtype=np.int64)
        out.append(
            AnnotatedImage(
                image_id=image_id, width=width, height=height, boxes=boxes, labels=labels
            )
        )
    return out


def extract_dataset(
    stacks: list,
    extractor: ProposalExtractor | None = None,
    n_classes: int = DEFAULT_N_CLUSTERS,
    seed: int = 0,
    threads: int = 1,
    sizes: dict[str, tuple[int, int]] | None = None,
    normalize: bool = True,
) -> tuple[list[AnnotatedImage], PseudoLabelModel, ExtractionStats]:
    """Run the full pipeline over a dataset of stacks (or ``.fms`` paths).

    Unreadable items are recorded in ``stats.failures`` instead of aborting
    the batch. Worker count changes wall time only: items carry their own
    seeds and results are aggregated in input order. The image canvas is
    the first level's grid unless ``sizes`` maps the image id to one.

    Raises ValueError when fewer descriptors survive than ``n_classes``.
    """
    extractor = extractor or ProposalExtractor(seed=seed)
    stats = ExtractionStats()

    def work(item):
        try:
            stack = read_feature_stack(item) if isinstance(item, str) else item
            proposals, n_regions = extractor.extract_with_stats(stack)
            first = stack.levels[0]
            canvas = (first.width, first.height)
            if sizes is not None and stack.image_id in sizes:
                canvas = tuple(sizes[stack.image_id])
            return (stack.image_id, canvas, proposals, n_regions, None)
        except Exception as exc:  # surfaced per item; the batch continues
            name = item if isinstance(item, str) else getattr(item, "image_id", "<stack>")
            return (str(name), (0, 0), [], 0, str(exc))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, stacks))
    else:
        results = [work(item) for item in stacks]

    per_image = []
    for image_id, canvas, proposals, n_regions, error in results:
        if error is not None:
            stats.failures.append((image_id, error))
            continue
        stats.images += 1
        stats.raw_regions += n_regions
        stats.proposals += len(proposals)
        per_image.append((image_id, canvas, proposals))

    all_desc = [p.descriptor for _, _, proposals in per_image for p in proposals]
    if len(all_desc) < n_classes:
        raise ValueError(
            f"only {len(all_desc)} descriptors for {n_classes} pseudo-classes; "
            "lower --classes or provide more images"
        )
    features = np.stack(all_desc)
    if normalize:
        features = l2_normalize_rows(features)
    model = kmeans_fit(features, n_classes, seed=seed)
    images = build_training_set(per_image, model, normalize=normalize)
    return images, model, stats
