"""Clustering and recovery metrics for simulation studies.

Cluster indices here are 0-based; label vectors may use any integer coding.
"""

from __future__ import annotations

from typing import Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import adjusted_rand_score

from .basis import BSplineBasis, gram_matrix
from .data import GroundTruth
from .ecm import merge_intervals

__all__ = [
    "adjusted_rand",
    "align_clusters",
    "mean_rmse",
    "interval_measure",
    "intersection_measure",
    "noninformative_fraction",
]


def adjusted_rand(labels_a, labels_b) -> float:
    """Hubert--Arabie adjusted Rand index between two partitions.

    Two trivial partitions that agree (both a single block, or both all
    singletons) score 1.
    """
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape != b.shape:
        raise ValueError(f"label vectors differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("label vectors are empty")
    return float(adjusted_rand_score(a, b))


def _l2_cost(true_coeffs: np.ndarray, est_coeffs: np.ndarray, gram: np.ndarray) -> np.ndarray:
    d = true_coeffs[:, None, :] - est_coeffs[None, :, :]
    return np.einsum("ghj,jk,ghk->gh", d, gram, d)


def align_clusters(true_coeffs, est_coeffs, basis: BSplineBasis) -> np.ndarray:
    """Injective map from true to estimated clusters minimising total squared L2 distance.

    Returns an array ``m`` of length ``G_true``; ``m[g]`` is the estimated
    cluster matched to true cluster ``g``, or ``-1`` when there are fewer
    estimated clusters than true ones and ``g`` is left unmatched.
    """
    T = np.atleast_2d(np.asarray(true_coeffs, dtype=float))
    E = np.atleast_2d(np.asarray(est_coeffs, dtype=float))
    if T.shape[1] != basis.dimension or E.shape[1] != basis.dimension:
        raise ValueError("coefficient matrices must have one column per basis function")
    cost = _l2_cost(T, E, gram_matrix(basis))
    rows, cols = linear_sum_assignment(cost)
    mapping = np.full(T.shape[0], -1, dtype=int)
    mapping[rows] = cols
    return mapping


def mean_rmse(true_coeffs, est_coeffs, basis: BSplineBasis) -> float:
    """``sqrt(mean_g int (mu_g - mu_hat_g)^2)`` under the best cluster matching."""
    T = np.atleast_2d(np.asarray(true_coeffs, dtype=float))
    E = np.atleast_2d(np.asarray(est_coeffs, dtype=float))
    if T.shape != E.shape:
        raise ValueError(f"shape mismatch: true {T.shape} vs estimated {E.shape}")
    if T.shape[1] != basis.dimension:
        raise ValueError(f"expected {basis.dimension} coefficients per cluster, got {T.shape[1]}")
    cost = _l2_cost(T, E, gram_matrix(basis))
    rows, cols = linear_sum_assignment(cost)
    # clip tiny negative values from rounding in the quadratic form
    return float(np.sqrt(max(cost[rows, cols].mean(), 0.0)))


def interval_measure(intervals: Sequence[Tuple[float, float]]) -> float:
    """Total length of a union of intervals."""
    return float(sum(hi - lo for lo, hi in merge_intervals(intervals)))


def intersection_measure(a: Sequence[Tuple[float, float]], b: Sequence[Tuple[float, float]]) -> float:
    """Length of ``(union a) & (union b)``, treating intervals as half-open ``[lo, hi)``."""
    A, B = merge_intervals(a), merge_intervals(b)
    i = j = 0
    total = 0.0
    while i < len(A) and j < len(B):
        lo = max(A[i][0], B[j][0])
        hi = min(A[i][1], B[j][1])
        if hi > lo:
            total += hi - lo
        if A[i][1] <= B[j][1]:
            i += 1
        else:
            j += 1
    return total


def noninformative_fraction(
    fused_pairs: Mapping[Tuple[int, int], Sequence[Tuple[float, float]]],
    truth: GroundTruth,
    est_means: Optional[np.ndarray] = None,
    basis: Optional[BSplineBasis] = None,
    mapping: Optional[Sequence[int]] = None,
) -> float:
    """Share of the true noninformative domain that the fit reports as fused.

    Per true pair the covered fraction is weighted by the pair's true
    noninformative length; pairs with none are skipped.

    Parameters
    ----------
    fused_pairs : mapping
        Estimated fused intervals keyed by 0-based cluster pairs ``(g, h)``, ``g < h``.
    truth : GroundTruth
        Simulation truth.
    est_means, basis : optional
        When given (and ``mapping`` is not), estimated clusters are matched to
        true clusters with :func:`align_clusters`.
    mapping : sequence of int, optional
        Explicit true-to-estimated cluster map (``-1`` for unmatched).
        Defaults to the identity.
    """
    G_true = truth.n_clusters
    if mapping is None:
        if est_means is not None:
            if basis is None:
                raise ValueError("aligning by estimated means requires the basis")
            mapping = align_clusters(truth.true_mean_coefficients, est_means, basis)
        else:
            mapping = np.arange(G_true)
    mapping = np.asarray(mapping, dtype=int)
    if mapping.shape != (G_true,):
        raise ValueError("mapping needs one entry per true cluster")

    num = den = 0.0
    for (g, h), true_iv in truth.noninformative_intervals.items():
        size = interval_measure(true_iv)
        if size <= 0:
            continue
        den += size
        a, b = mapping[g], mapping[h]
        if a < 0 or b < 0:
            continue
        est_iv = fused_pairs.get((int(min(a, b)), int(max(a, b))), [])
        num += intersection_measure(est_iv, true_iv)
    if den <= 0:
        raise ValueError("truth has no noninformative region for any pair")
    return float(min(num / den, 1.0))
