"""Shared numeric primitives: probability transforms, distances, ranking metrics.

Everything operates on contiguous float64 numpy arrays. Probability vectors
must be entrywise non-negative and sum to 1 within 1e-9; `check_probs`
enforces this at public boundaries. All functions are pure.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

__all__ = [
    "softmax",
    "normalized_softmax",
    "entropy",
    "euclid_sq",
    "auc",
    "distance_to_boundary",
    "check_probs",
]

PROB_SUM_TOL = 1e-9


def _as_float_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_probs(p, name: str = "p") -> np.ndarray:
    """Validate a probability vector (or row-wise matrix of them)."""
    arr = _as_float_array(p, name)
    if arr.shape[-1] < 1:
        raise DimensionError(f"{name} must have at least one entry")
    if np.any(arr < 0.0):
        raise ValueError(f"{name} has negative entries")
    sums = arr.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > PROB_SUM_TOL):
        raise ValueError(f"{name} rows must sum to 1 within {PROB_SUM_TOL}")
    return arr


def softmax(g) -> np.ndarray:
    """Numerically stable softmax over the last axis (max-subtraction)."""
    arr = _as_float_array(g, "logits")
    if arr.shape[-1] < 2:
        raise DimensionError("softmax needs at least 2 classes")
    shifted = arr - arr.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def normalized_softmax(g, tau: float) -> np.ndarray:
    """Softmax of logits rescaled by 1 / (1 + tau * ||g||_2) per row.

    The +1 keeps the denominator >= 1, so no epsilon guard is needed at the
    origin, and tau = 0 reduces exactly to plain softmax (same code path).
    """
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    arr = _as_float_array(g, "logits")
    denom = 1.0 + tau * np.linalg.norm(arr, axis=-1, keepdims=True)
    return softmax(arr / denom)


def entropy(p) -> float:
    """Shannon entropy in nats, with 0*ln(0) taken as 0."""
    arr = check_probs(p)
    if arr.ndim != 1:
        raise DimensionError("entropy expects a single probability vector")
    terms = np.where(arr > 0.0, arr * np.log(np.where(arr > 0.0, arr, 1.0)), 0.0)
    return float(-terms.sum())


def euclid_sq(a, b) -> float:
    """Squared euclidean distance between two equal-length vectors."""
    av = _as_float_array(a, "a")
    bv = _as_float_array(b, "b")
    if av.shape != bv.shape:
        raise DimensionError(f"length mismatch: {av.shape} vs {bv.shape}")
    d = av - bv
    return float(np.dot(d.ravel(), d.ravel()))


def auc(member_scores, nonmember_scores) -> float:
    """Probability that a random member score exceeds a random non-member score.

    Mann-Whitney formulation with ties counted as 1/2, computed from average
    ranks of the pooled sample. 0.5 means the scores carry no membership
    signal; 1.0 means perfect separation.
    """
    m = _as_float_array(member_scores, "member_scores").ravel()
    n = _as_float_array(nonmember_scores, "nonmember_scores").ravel()
    if m.size == 0 or n.size == 0:
        raise ValueError("auc needs non-empty score lists on both sides")
    pooled = np.concatenate([m, n])
    _, inverse, counts = np.unique(pooled, return_inverse=True, return_counts=True)
    # average 1-based rank of each tie group
    upper = np.cumsum(counts)
    avg_rank = upper - (counts - 1) / 2.0
    ranks = avg_rank[inverse]
    u = ranks[: m.size].sum() - m.size * (m.size + 1) / 2.0
    return float(u / (m.size * n.size))


def distance_to_boundary(p) -> float | np.ndarray:
    """Largest probability minus the second largest (per row for a matrix).

    High values mean the prediction sits far from the decision boundary;
    overfit models push training members toward 1.0.
    """
    arr = check_probs(p)
    if arr.shape[-1] < 2:
        raise DimensionError("distance_to_boundary needs at least 2 classes")
    top2 = np.partition(arr, -2, axis=-1)
    gap = top2[..., -1] - top2[..., -2]
    return float(gap) if gap.ndim == 0 else gap
