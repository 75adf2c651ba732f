"""Unsupervised region proposals and pseudo-labels from backbone feature maps.

The pipeline: cluster feature-map pixels locally into masks, cut masks into
connected regions, pool a descriptor per region, merge near-duplicate
proposals, then cluster all descriptors dataset-wide into pseudo-classes
and emit a COCO-style training set. Companion tools score proposal recall,
evaluate a set-matched detection loss, and filter detector outputs into the
next self-training round.
"""

from .boxes import box_giou, box_iou, giou_matrix, iou_matrix
from .formats import (
    AnnotatedImage,
    FeatureMap,
    FeatureStack,
    FormatError,
    SchemaError,
    read_annotations,
    read_feature_stack,
    write_annotations,
    write_feature_stack,
)
from .kmeans import (
    PseudoLabelModel,
    SeededKMeans,
    kmeans_assign,
    kmeans_fit,
    load_model,
    save_model,
)
from .matching import (
    MatchResult,
    MatchWeights,
    Prediction,
    detection_loss,
    hungarian_match,
    min_permutation_loss,
)
from .metrics import (
    DEFAULT_IOU_THRESHOLDS,
    EvalReport,
    average_recall,
    cluster_purity,
    evaluate_proposals,
    pseudo_label_accuracy,
)
from .pipeline import ProposalExtractor, build_training_set, extract_dataset
from .regions import (
    Proposal,
    Region,
    connected_components,
    filter_proposals,
    region_to_proposal,
)
from .selftrain import ScoredBox, build_next_training_set, filter_predictions
from .spectral import (
    ClusterMask,
    SpectralGridClusterer,
    build_affinity,
    cluster_stack,
    normalized_laplacian,
    spectral_cluster,
)
from .validation import mix_seed

__version__ = "0.1.0"

__all__ = [
    "AnnotatedImage",
    "ClusterMask",
    "DEFAULT_IOU_THRESHOLDS",
    "EvalReport",
    "FeatureMap",
    "FeatureStack",
    "FormatError",
    "MatchResult",
    "MatchWeights",
    "Prediction",
    "Proposal",
    "ProposalExtractor",
    "PseudoLabelModel",
    "Region",
    "SchemaError",
    "ScoredBox",
    "SeededKMeans",
    "SpectralGridClusterer",
    "average_recall",
    "box_giou",
    "box_iou",
    "build_affinity",
    "build_next_training_set",
    "build_training_set",
    "cluster_purity",
    "cluster_stack",
    "connected_components",
    "detection_loss",
    "evaluate_proposals",
    "extract_dataset",
    "filter_predictions",
    "filter_proposals",
    "giou_matrix",
    "hungarian_match",
    "iou_matrix",
    "kmeans_assign",
    "kmeans_fit",
    "load_model",
    "min_permutation_loss",
    "mix_seed",
    "normalized_laplacian",
    "pseudo_label_accuracy",
    "read_annotations",
    "read_feature_stack",
    "region_to_proposal",
    "save_model",
    "spectral_cluster",
    "write_annotations",
    "write_feature_stack",
]
