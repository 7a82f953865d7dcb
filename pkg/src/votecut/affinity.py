"""Thresholded patch-affinity graph built from cosine similarity of features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .featureio import FeatureMap

LOW_WEIGHT = 1e-5


@dataclass(frozen=True, eq=False)
class AffinityGraph:
    """Symmetric weight matrix over patch nodes plus its degree vector.

    Entries are binarized: 1 where cosine similarity cleared the threshold,
    ``LOW_WEIGHT`` elsewhere, so the graph is always connected and degrees
    stay strictly positive.
    """

    n: int
    weights: np.ndarray  # (n, n) float64
    degrees: np.ndarray  # (n,) float64

    def __post_init__(self):
        if self.weights.shape != (self.n, self.n):
            raise ValueError("weights must be n x n")
        if self.degrees.shape != (self.n,):
            raise ValueError("degrees must have length n")

    def is_complete(self) -> bool:
        """True when every pair cleared the threshold (no cut structure)."""
        return bool(np.all(self.weights == 1.0))


def build_affinity(fm: FeatureMap, tau_ncut: float) -> AffinityGraph:
    """Binarized cosine-similarity graph: weight 1 iff cosine >= ``tau_ncut``.

    The threshold is inclusive. Sub-threshold pairs keep a small positive
    weight instead of zero so the degree matrix never becomes singular.
    """
    vectors = fm.vectors().astype(np.float64)
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise DataError(f"patch {bad} has a zero-norm feature vector")
    unit = vectors / norms[:, None]
    cosine = unit @ unit.T
    # mirror the thresholded upper triangle so W is symmetric bit-for-bit
    upper = np.triu(cosine >= tau_ncut, 1)
    weights = np.where(upper | upper.T, 1.0, LOW_WEIGHT)
    np.fill_diagonal(weights, 1.0)
    degrees = weights.sum(axis=1)
    return AffinityGraph(n=fm.n_patches, weights=weights, degrees=degrees)


def affinity_from_weights(weights: np.ndarray) -> AffinityGraph:
    """Wrap an explicit symmetric weight matrix (used by tests and oracles)."""
    weights = np.asarray(weights, dtype=np.float64)
    n = weights.shape[0]
    if weights.shape != (n, n):
        raise ValueError("weights must be square")
    if not np.array_equal(weights, weights.T):
        raise ValueError("weights must be symmetric")
    return AffinityGraph(n=n, weights=weights, degrees=weights.sum(axis=1))
