"""Per-image discovery pipeline: proposals from every model's eigenvector,
cross-model IoU clustering, pixel voting, consensus scoring, and refinement.

All stages are deterministic. Proposals are brought to a common voting
lattice and canonically ordered (descending area, then first set bit, then
raw bit pattern) before clustering, so the result does not depend on the
order the models were supplied in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .affinity import build_affinity
from .core import BinaryMask, PipelineConfig, ScoredInstance, tight_bbox
from .crf import crf_refine
from .errors import VotecutError
from .featureio import FeatureMap
from .proposals import MaskProposal, full_grid_proposal, generate_proposals
from .spectral import second_smallest_eigenpair

log = logging.getLogger(__name__)

VOTE_SIDE = 480


@dataclass(frozen=True, eq=False)
class ProposalCluster:
    """One consensus group: a pivot proposal and every mask that overlaps it."""

    pivot_index: int
    member_indices: list
    members: list

    @property
    def size(self) -> int:
        return len(self.member_indices)


@dataclass(frozen=True, eq=False)
class VoteField:
    """Per-pixel average of the cluster's member masks."""

    height: int
    width: int
    mean: np.ndarray


class ImageRunError(VotecutError):
    """Pipeline failure wrapped with the offending image id."""

    def __init__(self, image_id, cause: Exception):
        super().__init__(f"image {image_id!r}: {cause}")
        self.image_id = image_id
        self.cause = cause


def resize_mask(mask: BinaryMask, height: int, width: int) -> BinaryMask:
    """Nearest-neighbor resampling to an arbitrary target lattice."""
    rows = (np.arange(height) * mask.height) // height
    cols = (np.arange(width) * mask.width) // width
    return BinaryMask(height, width, mask.bits[rows][:, cols])


def normalize_resolution(proposals, target) -> list:
    """Upsample patch-grid proposal masks to the common voting lattice."""
    th, tw = target
    out = []
    for prop in proposals:
        mask = prop.mask if isinstance(prop, MaskProposal) else prop
        if mask.height > th or mask.width > tw:
            raise ValueError(
                f"target {target} smaller than source "
                f"{(mask.height, mask.width)}"
            )
        out.append(resize_mask(mask, th, tw))
    return out


def canonical_mask_order(masks) -> list:
    """Indices sorting masks by descending area, then first set bit, then
    the raw bit pattern; makes downstream tie-breaks input-order free."""
    def key(idx):
        bits = masks[idx].bits
        flat = np.flatnonzero(bits.ravel())
        first = int(flat[0]) if flat.size else bits.size
        return (-int(flat.size), first, np.packbits(bits).tobytes())

    return sorted(range(len(masks)), key=key)


def pairwise_iou_matrix(masks) -> np.ndarray:
    """Dense IoU matrix; exact because 0/1 dot products stay integral."""
    n = len(masks)
    if n == 0:
        return np.zeros((0, 0))
    stack = np.stack([m.bits.ravel() for m in masks]).astype(np.float32)
    # counts stay below 2**24, so the float32 products and sums are exact;
    # divide in float64 to agree bitwise with mask_iou
    inter = (stack @ stack.T).astype(np.float64)
    areas = inter.diagonal().copy()
    union = areas[:, None] + areas[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
    return iou


def greedy_iou_clustering(masks, tau_c: float) -> list:
    """Repeatedly pick the unassigned mask with the most unassigned
    neighbors above the IoU threshold (ties to the lowest index) as a
    pivot, and absorb those neighbors into its cluster."""
    n = len(masks)
    if n == 0:
        return []
    adjacency = pairwise_iou_matrix(masks) > tau_c
    np.fill_diagonal(adjacency, False)
    alive = np.ones(n, dtype=bool)
    clusters = []
    while alive.any():
        counts = np.where(alive, (adjacency & alive[None, :]).sum(axis=1), -1)
        pivot = int(np.argmax(counts))
        members = np.flatnonzero(adjacency[pivot] & alive)
        indices = sorted({pivot, *members.tolist()})
        clusters.append(
            ProposalCluster(
                pivot_index=pivot,
                member_indices=[int(i) for i in indices],
                members=[masks[i] for i in indices],
            )
        )
        alive[indices] = False
    return clusters


def vote_field(cluster: ProposalCluster) -> VoteField:
    if not cluster.members:
        raise ValueError("cluster has no members")
    stack = np.stack([m.bits for m in cluster.members])
    return VoteField(
        height=stack.shape[1],
        width=stack.shape[2],
        mean=stack.mean(axis=0),
    )


def vote_mask(cluster: ProposalCluster, tau_m: float) -> BinaryMask:
    """Pixels where the member average strictly exceeds the vote threshold.

    May come back empty; callers drop such instances.
    """
    field = vote_field(cluster)
    return BinaryMask(field.height, field.width, field.mean > tau_m)


def score_clusters(clusters) -> list:
    """Cluster sizes normalized by the largest size; empty input, empty output."""
    if not clusters:
        return []
    sizes = [c.size for c in clusters]
    biggest = max(sizes)
    return [s / biggest for s in sizes]


def model_proposals(fm: FeatureMap, cfg: PipelineConfig) -> list:
    """Affinity graph, eigenvector, and proposals for one model's features.

    A graph whose every pair cleared the threshold has no cut structure;
    the whole grid is emitted as a single degenerate proposal.
    """
    graph = build_affinity(fm, cfg.tau_ncut)
    if graph.is_complete():
        return [full_grid_proposal(fm.grid_h, fm.grid_w, fm.model_id)]
    ev = second_smallest_eigenpair(graph)
    return generate_proposals(ev, fm.grid_h, fm.grid_w, cfg.k_max, fm.model_id)


def assemble_instances(image_id, proposals, image_rgb, cfg: PipelineConfig,
                       *, use_crf: bool = True, vote_side: int = VOTE_SIDE,
                       image_size=None, stats: dict | None = None) -> list:
    """Clustering, voting, scoring, capping, and refinement of proposals."""
    if not proposals:
        return []
    masks = normalize_resolution(proposals, (vote_side, vote_side))
    masks = [masks[i] for i in canonical_mask_order(masks)]
    clusters = greedy_iou_clustering(masks, cfg.tau_c)
    scores = score_clusters(clusters)

    voted = []
    for cluster, score in zip(clusters, scores):
        mask = vote_mask(cluster, cfg.tau_m)
        if mask.is_empty():
            _bump(stats, "empty_votes")
            log.debug("image %r: cluster at pivot %d voted empty",
                      image_id, cluster.pivot_index)
            continue
        voted.append((cluster, score, mask))

    voted.sort(key=lambda item: (-item[1], -item[0].size, item[0].pivot_index))
    if len(voted) > cfg.max_instances:
        _bump(stats, "capped", len(voted) - cfg.max_instances)
        voted = voted[: cfg.max_instances]

    if image_rgb is not None:
        target_h, target_w = image_rgb.shape[:2]
    elif image_size is not None:
        target_h, target_w = image_size
    else:
        target_h, target_w = vote_side, vote_side

    instances = []
    for cluster, score, mask in voted:
        final = resize_mask(mask, target_h, target_w)
        if use_crf and image_rgb is not None:
            final = crf_refine(final, image_rgb, cfg.crf_params)
        if final.is_empty():
            _bump(stats, "empty_refined")
            log.debug("image %r: instance at pivot %d refined to empty",
                      image_id, cluster.pivot_index)
            continue
        instances.append(
            ScoredInstance(
                mask=final,
                box=tight_bbox(final),
                score=score,
                image_id=image_id,
            )
        )
    return instances


def run_votecut(image_id, feature_maps, image_rgb, cfg: PipelineConfig,
                *, use_crf: bool = True, vote_side: int = VOTE_SIDE,
                image_size=None, stats: dict | None = None) -> list:
    """End-to-end discovery for one image across an ensemble of models."""
    if not feature_maps:
        raise ValueError("need at least one feature map")
    try:
        proposals = []
        for fm in feature_maps:
            proposals.extend(model_proposals(fm, cfg))
        return assemble_instances(
            image_id, proposals, image_rgb, cfg,
            use_crf=use_crf, vote_side=vote_side,
            image_size=image_size, stats=stats,
        )
    except VotecutError:
        raise
    except Exception as exc:  # annotate with the image id for batch runs
        raise ImageRunError(image_id, exc) from exc


def _bump(stats: dict | None, key: str, amount: int = 1):
    if stats is not None:
        stats[key] = stats.get(key, 0) + amount
