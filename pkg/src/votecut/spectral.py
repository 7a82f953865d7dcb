"""Second-smallest generalized eigenpair of (D - W) x = lambda D x.

The problem is solved in symmetric coordinates, L_sym = D^{-1/2} (D - W)
D^{-1/2}, where the trivial eigenvector D^{1/2} 1 is known analytically.
That direction is deflated by an explicit rank-one shift, so the wanted
pair becomes the smallest eigenpair of the deflated operator. Small
graphs go through a direct dense eigendecomposition; larger ones through
Lanczos iteration with full reorthogonalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .affinity import AffinityGraph
from .errors import SolverError

DENSE_LIMIT = 1024
DEFLATION_SHIFT = 3.0  # > max eigenvalue (2) of the normalized Laplacian
_LANCZOS_SEED = 0x5EC7
_MAX_LANCZOS_STEPS = 500


@dataclass(frozen=True, eq=False)
class Eigenvector:
    """Eigenpair with the residual actually achieved by the solver.

    ``values`` is normalized to unit length under the D-inner-product and
    sign-fixed so the entry of largest magnitude is positive.
    """

    values: np.ndarray
    eigenvalue: float
    residual: float


def _sign_fix(x: np.ndarray) -> np.ndarray:
    # argmax returns the lowest index among ties
    pivot = int(np.argmax(np.abs(x)))
    if x[pivot] < 0:
        return -x
    return x


def _generalized_residual(g: AffinityGraph, x: np.ndarray, lam: float) -> float:
    lhs = g.degrees * x - g.weights @ x
    return float(np.linalg.norm(lhs - lam * g.degrees * x))


def _symmetric_parts(g: AffinityGraph):
    d_isqrt = 1.0 / np.sqrt(g.degrees)
    l_sym = -(g.weights * d_isqrt[:, None]) * d_isqrt[None, :]
    l_sym[np.diag_indices_from(l_sym)] += 1.0
    l_sym = 0.5 * (l_sym + l_sym.T)
    trivial = np.sqrt(g.degrees)
    trivial /= np.linalg.norm(trivial)
    return l_sym, trivial, d_isqrt


def _finish(g: AffinityGraph, y: np.ndarray, lam: float,
            d_isqrt: np.ndarray, tol: float) -> Eigenvector:
    x = d_isqrt * y
    # y is unit-norm, so x is unit-norm in the D-inner-product already
    x = _sign_fix(x)
    residual = _generalized_residual(g, x, lam)
    if residual > tol:
        raise SolverError(
            f"eigen-solver did not reach tolerance {tol:g}; "
            f"achieved residual {residual:g}",
            residual=residual,
        )
    return Eigenvector(values=x, eigenvalue=float(lam), residual=residual)


def second_smallest_eigenpair(g: AffinityGraph, tol: float = 1e-8) -> Eigenvector:
    """Eigenpair for the second-smallest generalized eigenvalue of the graph."""
    if g.n < 2:
        raise ValueError("graph needs at least 2 nodes for a second eigenpair")
    if np.any(g.degrees <= 0.0):
        raise ValueError("degrees must be strictly positive")
    l_sym, trivial, d_isqrt = _symmetric_parts(g)
    deflated = l_sym + DEFLATION_SHIFT * np.outer(trivial, trivial)
    if g.n <= DENSE_LIMIT:
        eigvals, eigvecs = scipy.linalg.eigh(
            deflated, subset_by_index=[0, 0], driver="evr"
        )
        lam, y = eigvals[0], eigvecs[:, 0]
    else:
        # the generalized residual picks up a factor of at most sqrt(max degree)
        tol_sym = 0.5 * tol / max(1.0, float(np.sqrt(g.degrees.max())))
        lam, y = _lanczos_smallest(deflated, trivial, tol_sym)
    return _finish(g, y, lam, d_isqrt, tol)


def smallest_eigenpair(g: AffinityGraph, tol: float = 1e-8) -> Eigenvector:
    """Smallest generalized eigenpair; lambda = 0 with a constant eigenvector
    for any connected graph. Kept as an internal solver check."""
    if np.any(g.degrees <= 0.0):
        raise ValueError("degrees must be strictly positive")
    l_sym, _, d_isqrt = _symmetric_parts(g)
    eigvals, eigvecs = scipy.linalg.eigh(
        l_sym, subset_by_index=[0, 0], driver="evr"
    )
    return _finish(g, eigvecs[:, 0], eigvals[0], d_isqrt, tol)


def _lanczos_smallest(a: np.ndarray, trivial: np.ndarray, tol_sym: float):
    """Smallest eigenpair of the dense symmetric operator ``a`` by Lanczos
    iteration with full reorthogonalization against all previous vectors."""
    n = a.shape[0]
    rng = np.random.default_rng(_LANCZOS_SEED)
    budget = min(n, _MAX_LANCZOS_STEPS)

    q = rng.standard_normal(n)
    q -= trivial * (trivial @ q)
    q /= np.linalg.norm(q)

    basis = np.empty((budget, n))
    alphas = np.empty(budget)
    betas = np.empty(budget)
    basis[0] = q

    k = 0
    while True:
        w = a @ basis[k]
        alphas[k] = basis[k] @ w
        w -= alphas[k] * basis[k]
        if k > 0:
            w -= betas[k - 1] * basis[k - 1]
        # full reorthogonalization, two passes
        for _ in range(2):
            w -= basis[: k + 1].T @ (basis[: k + 1] @ w)
        beta = np.linalg.norm(w)
        theta, s = _smallest_ritz(alphas[: k + 1], betas[:k])
        res_bound = abs(beta * s[-1])
        if res_bound <= tol_sym or k == budget - 1:
            y = basis[: k + 1].T @ s
            y /= np.linalg.norm(y)
            return float(theta), y
        if beta < 1e-14:
            # invariant subspace hit early; continue in a fresh direction
            w = rng.standard_normal(n)
            w -= trivial * (trivial @ w)
            w -= basis[: k + 1].T @ (basis[: k + 1] @ w)
            beta = np.linalg.norm(w)
            if beta < 1e-14:
                y = basis[: k + 1].T @ s
                y /= np.linalg.norm(y)
                return float(theta), y
            betas[k] = 0.0
        else:
            betas[k] = beta
        k += 1
        basis[k] = w / beta


def _smallest_ritz(alphas: np.ndarray, betas: np.ndarray):
    if alphas.size == 1:
        return float(alphas[0]), np.ones(1)
    vals, vecs = scipy.linalg.eigh_tridiagonal(
        alphas, betas, select="i", select_range=(0, 0)
    )
    return float(vals[0]), vecs[:, 0]
