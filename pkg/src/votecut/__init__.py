"""Multi-model spectral object discovery.

Feature grids from an ensemble of vision backbones become thresholded
cosine-affinity graphs; the second generalized eigenvector of each graph
is clustered into mask proposals; proposals vote across models into
scored instances, optionally snapped to image edges by a dense CRF.
Includes the soft-target loss arithmetic for training on those instances
and a class-agnostic AP/AR evaluator.
"""

from .affinity import AffinityGraph, build_affinity
from .core import (
    BinaryMask,
    BoundingBox,
    PipelineConfig,
    ScoredInstance,
    box_iou,
    mask_iou,
    rle_decode,
    rle_encode,
    tight_bbox,
)
from .crf import CrfParams, MarginalField, crf_refine, meanfield_step
from .evalkit import EvalReport, average_precision, average_recall, evaluate, match_instances
from .featureio import (
    Annotation,
    AnnotationSet,
    FeatureMap,
    ImageRecord,
    read_annotations,
    read_feature_file,
    read_ppm,
    write_annotations,
    write_feature_file,
    write_ppm,
)
from .pipeline import (
    ProposalCluster,
    VoteField,
    greedy_iou_clustering,
    normalize_resolution,
    run_votecut,
    score_clusters,
    vote_mask,
)
from .proposals import MaskProposal, connected_components, generate_proposals, kmeans_1d
from .softloss import (
    ClassLogits,
    InstanceTarget,
    droploss_gate,
    filter_pseudo_labels,
    soft_cls_loss,
    total_loss,
    weighted_instance_loss,
)
from .spectral import Eigenvector, second_smallest_eigenpair

__version__ = "0.1.0"

__all__ = [
    "AffinityGraph", "Annotation", "AnnotationSet", "BinaryMask",
    "BoundingBox", "ClassLogits", "CrfParams", "EvalReport", "Eigenvector",
    "FeatureMap", "ImageRecord", "InstanceTarget", "MarginalField",
    "MaskProposal", "PipelineConfig", "ProposalCluster", "ScoredInstance",
    "VoteField", "average_precision", "average_recall", "box_iou",
    "build_affinity", "connected_components", "crf_refine", "droploss_gate",
    "evaluate", "filter_pseudo_labels", "generate_proposals",
    "greedy_iou_clustering", "kmeans_1d", "mask_iou", "match_instances",
    "meanfield_step", "normalize_resolution", "read_annotations",
    "read_feature_file", "read_ppm", "rle_decode", "rle_encode",
    "run_votecut", "score_clusters", "second_smallest_eigenpair",
    "soft_cls_loss", "tight_bbox", "total_loss", "vote_mask",
    "weighted_instance_loss", "write_annotations", "write_feature_file",
    "write_ppm",
]
