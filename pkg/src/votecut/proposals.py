"""Instance mask proposals from an eigenvector: exact 1-D k-means over the
eigenvector values followed by connected-component analysis per segment.

The k-means step is solved to optimality by dynamic programming over the
sorted values instead of seeded iteration, so proposal generation is fully
deterministic. When the values contain fewer distinct levels than requested
clusters, the surplus clusters stay empty and only the distinct levels are
labeled (a constant eigenvector therefore yields a single full-grid segment).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import BinaryMask
from .spectral import Eigenvector


@dataclass(frozen=True, eq=False)
class MaskProposal:
    """Patch-resolution candidate mask with its provenance."""

    mask: BinaryMask
    model_id: str
    k_used: int
    segment_label: int
    component_index: int


def _segment_costs(prefix1: np.ndarray, prefix2: np.ndarray,
                   starts: np.ndarray, end: int) -> np.ndarray:
    """WCSS of sorted-value segments [start, end] for a vector of starts."""
    cnt = end + 1 - starts
    s1 = prefix1[end + 1] - prefix1[starts]
    s2 = prefix2[end + 1] - prefix2[starts]
    return s2 - s1 * s1 / cnt


def kmeans_1d(values, k: int) -> np.ndarray:
    """Labels of the optimal k-cluster partition of 1-D values.

    Clusters of an optimal partition are contiguous runs of the sorted
    values; the dynamic program minimizes the within-cluster sum of squares
    exactly. Labels are numbered by ascending cluster mean. If the data has
    fewer distinct values than k, each distinct value forms one cluster.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    n = values.size
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of values ({n})")

    order = np.argsort(values, kind="stable")
    svals = values[order]
    distinct = 1 + int(np.count_nonzero(np.diff(svals)))
    labels_sorted = np.empty(n, dtype=np.int64)
    if k == 1:
        labels_sorted[:] = 0
    elif distinct <= k:
        # one cluster per distinct level; surplus clusters stay empty
        labels_sorted[0] = 0
        np.cumsum(np.diff(svals) != 0, out=labels_sorted[1:])
    else:
        boundaries = _dp_boundaries(svals, k)
        labels_sorted = np.zeros(n, dtype=np.int64)
        for cluster, start in enumerate(boundaries):
            labels_sorted[start:] = cluster
    labels = np.empty(n, dtype=np.int64)
    labels[order] = labels_sorted
    return labels


def _dp_boundaries(svals: np.ndarray, k: int) -> list:
    """Start indices of the k optimal clusters over the sorted values."""
    n = svals.size
    prefix1 = np.concatenate(([0.0], np.cumsum(svals)))
    prefix2 = np.concatenate(([0.0], np.cumsum(svals * svals)))

    # best[i] = optimal cost of clustering svals[:i+1] with the current
    # number of clusters; choices[layer-2][i] = start of the last cluster
    counts = np.arange(1, n + 1, dtype=np.float64)
    best = prefix2[1:] - prefix1[1:] * prefix1[1:] / counts
    starts_all = np.arange(n)
    choices = []
    for layer in range(2, k + 1):
        new_best = np.full(n, np.inf)
        new_choice = np.zeros(n, dtype=np.int64)
        # last cluster [j, i] needs j >= layer-1 so earlier clusters are nonempty
        for i in range(layer - 1, n):
            js = starts_all[layer - 1 : i + 1]
            totals = best[js - 1] + _segment_costs(prefix1, prefix2, js, i)
            pos = int(np.argmin(totals))
            new_best[i] = totals[pos]
            new_choice[i] = js[pos]
        best = new_best
        choices.append(new_choice)

    boundaries = [0] * k
    end = n - 1
    for layer in range(k, 1, -1):
        start = int(choices[layer - 2][end])
        boundaries[layer - 1] = start
        end = start - 1
    return boundaries


_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def connected_components(label_grid: np.ndarray, segment: int) -> list:
    """Maximal 4-connected regions of cells labeled ``segment``, as masks.

    Components come back in raster-scan order of their first cell; an
    absent segment yields an empty list.
    """
    label_grid = np.asarray(label_grid)
    if label_grid.ndim != 2:
        raise ValueError("label grid must be 2-D")
    member = label_grid == segment
    labeled, count = ndimage.label(member, structure=_FOUR_CONNECTED)
    return [
        BinaryMask.from_array(labeled == idx) for idx in range(1, count + 1)
    ]


def generate_proposals(ev: Eigenvector, grid_h: int, grid_w: int, k_max: int,
                       model_id: str = "") -> list:
    """Proposals from every k in 2..k_max: cluster the eigenvector, split
    each segment into connected components, one proposal per component."""
    values = np.asarray(ev.values, dtype=np.float64).ravel()
    if values.size != grid_h * grid_w:
        raise ValueError(
            f"eigenvector length {values.size} != grid {grid_h}x{grid_w}"
        )
    if k_max < 2:
        raise ValueError("k_max must be >= 2")
    proposals = []
    for k in range(2, k_max + 1):
        labels = kmeans_1d(values, k).reshape(grid_h, grid_w)
        for segment in np.unique(labels):
            for comp_idx, mask in enumerate(connected_components(labels, segment)):
                proposals.append(
                    MaskProposal(
                        mask=mask,
                        model_id=model_id,
                        k_used=k,
                        segment_label=int(segment),
                        component_index=comp_idx,
                    )
                )
    return proposals


def full_grid_proposal(grid_h: int, grid_w: int, model_id: str = "") -> MaskProposal:
    """Degenerate fallback when a graph has no cut structure at all."""
    return MaskProposal(
        mask=BinaryMask.ones(grid_h, grid_w),
        model_id=model_id,
        k_used=2,
        segment_label=0,
        component_index=0,
    )
