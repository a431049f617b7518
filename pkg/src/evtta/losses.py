"""Temporal-consistency losses and their gradients.

Classification losses act on softmax probability vectors; the Gaussian
variants act on ``(mu, sigma)`` pairs. Every loss has a companion ``*_grad``
returning derivatives with respect to its inputs so the adaptation engine
can backpropagate through the network by hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

PROB_FLOOR = 1e-7
VARIANCE_RATIO_BOUNDS = (0.1, 10.0)
_BOUND_RTOL = 1e-12
_HALF_LOG_2PIE = 0.5 * math.log(2 * math.pi * math.e)


class InconsistencyPolicy(str, Enum):
    IGNORE = "ignore"
    MAXIMIZE = "maximize"


def _probs(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    return p


def entropy(p) -> float:
    """Shannon entropy in nats, with ``0 log 0 = 0``."""
    p = _probs(p)
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {p.sum()!r}, expected 1")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def entropy_grad(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return -(np.log(np.maximum(p, 1e-300)) + 1.0)


def symmetric_kl(p, q, floor: float = PROB_FLOOR) -> float:
    """``KL(p||q) + KL(q||p)`` after clamping both vectors below by ``floor``."""
    p, q = _probs(p), _probs(q)
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch {p.shape} vs {q.shape}")
    pc, qc = np.maximum(p, floor), np.maximum(q, floor)
    return float(np.sum((pc - qc) * (np.log(pc) - np.log(qc))))


def symmetric_kl_grad(p, q, floor: float = PROB_FLOOR):
    """Gradients of :func:`symmetric_kl` w.r.t. ``p`` and ``q`` (zero where clamped)."""
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    pc, qc = np.maximum(p, floor), np.maximum(q, floor)
    log_ratio = np.log(pc) - np.log(qc)
    gp = np.where(p > floor, log_ratio + 1.0 - qc / pc, 0.0)
    gq = np.where(q > floor, -log_ratio + 1.0 - pc / qc, 0.0)
    return gp, gq


def _check_k(probs, anchor_index):
    K = len(probs)
    if K < 2:
        raise ValueError(f"need at least 2 slices, got {K}")
    if not 0 <= anchor_index < K:
        raise ValueError(f"anchor_index {anchor_index} out of range for K={K}")
    return K


def prediction_similarity_loss(probs, anchor_index: int = 0, floor: float = PROB_FLOOR) -> float:
    """Half the summed symmetric KL between the anchor and each other slice."""
    probs = np.asarray(probs, dtype=np.float64)
    K = _check_k(probs, anchor_index)
    a = probs[anchor_index]
    return 0.5 * sum(symmetric_kl(a, probs[k], floor) for k in range(K) if k != anchor_index)


def prediction_similarity_grad(probs, anchor_index: int = 0, floor: float = PROB_FLOOR) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    K = _check_k(probs, anchor_index)
    grad = np.zeros_like(probs)
    for k in range(K):
        if k == anchor_index:
            continue
        ga, gk = symmetric_kl_grad(probs[anchor_index], probs[k], floor)
        grad[anchor_index] += 0.5 * ga
        grad[k] += 0.5 * gk
    return grad


@dataclass(frozen=True)
class VoteRecord:
    votes: tuple[int, ...]
    anchor_index: int
    majority: Optional[int]  # None when the other slices have no strict majority
    consistent: bool


def strict_majority(votes) -> Optional[int]:
    """The label held by more than half of ``votes``, else None."""
    votes = np.asarray(votes, dtype=np.int64)
    if votes.size == 0:
        return None
    labels, counts = np.unique(votes, return_counts=True)
    best = int(np.argmax(counts))
    return int(labels[best]) if counts[best] * 2 > votes.size else None


def consistency_vote(probs, anchor_index: int = 0) -> VoteRecord:
    """Compare the anchor's argmax with the strict majority of the other slices."""
    probs = np.asarray(probs, dtype=np.float64)
    _check_k(probs, anchor_index)
    votes = tuple(int(v) for v in probs.argmax(axis=1))
    others = [v for k, v in enumerate(votes) if k != anchor_index]
    majority = strict_majority(others)
    return VoteRecord(votes, anchor_index, majority, majority is not None and votes[anchor_index] == majority)


def selective_entropy_loss(anchor_prob, vote: VoteRecord, policy=InconsistencyPolicy.IGNORE) -> float:
    policy = InconsistencyPolicy(policy)
    if vote.consistent:
        return entropy(anchor_prob)
    return -entropy(anchor_prob) if policy is InconsistencyPolicy.MAXIMIZE else 0.0


def selective_entropy_grad(anchor_prob, vote: VoteRecord, policy=InconsistencyPolicy.IGNORE) -> np.ndarray:
    policy = InconsistencyPolicy(policy)
    g = entropy_grad(anchor_prob)
    if vote.consistent:
        return g
    return -g if policy is InconsistencyPolicy.MAXIMIZE else np.zeros_like(g)


# Gaussian (regression) variants ---------------------------------------------


def _sigma_check(*sigmas):
    for s in sigmas:
        if not s > 0:
            raise ValueError(f"sigma must be positive, got {s}")


def gaussian_symmetric_kl(out1, outk) -> float:
    """Divergence between two Gaussians as used for the similarity loss.

    Equals the true symmetric KL plus 1: identical Gaussians score 1.
    """
    (m1, s1), (mk, sk) = out1, outk
    _sigma_check(s1, sk)
    a, b, d = s1 * s1, sk * sk, m1 - mk
    return float((a * a + b * b + (a + b) * d * d) / (2 * a * b))


def gaussian_symmetric_kl_grad(out1, outk):
    """``(d/d mu1, d/d sigma1), (d/d muk, d/d sigmak)``."""
    (m1, s1), (mk, sk) = out1, outk
    _sigma_check(s1, sk)
    d = m1 - mk
    dd = d / sk ** 2 + d / s1 ** 2
    ds1 = s1 / sk ** 2 - sk ** 2 / s1 ** 3 - d * d / s1 ** 3
    dsk = -s1 ** 2 / sk ** 3 + sk / s1 ** 2 - d * d / sk ** 3
    return np.array([dd, ds1]), np.array([-dd, dsk])


def gaussian_entropy(out) -> float:
    """Differential entropy ``log(sigma * sqrt(2 pi e))``."""
    _, s = out
    _sigma_check(s)
    return float(math.log(s) + _HALF_LOG_2PIE)


def gaussian_entropy_grad(out) -> np.ndarray:
    _, s = out
    return np.array([0.0, 1.0 / s])


def variance_consistency(outs, anchor_index: int = 0, bounds=VARIANCE_RATIO_BOUNDS) -> bool:
    """True iff every ``sigma_anchor^2 / sigma_k^2`` lies within ``bounds`` (inclusive)."""
    outs = np.asarray(outs, dtype=np.float64)
    lo, hi = bounds
    # inclusive up to rounding: sqrt(10)**2 lands one ulp above 10
    lo, hi = lo * (1 - _BOUND_RTOL), hi * (1 + _BOUND_RTOL)
    a = outs[anchor_index, 1] ** 2
    for k in range(len(outs)):
        if k == anchor_index:
            continue
        r = a / outs[k, 1] ** 2
        if not lo <= r <= hi:
            return False
    return True


def gaussian_similarity_loss(outs, anchor_index: int = 0) -> float:
    outs = np.asarray(outs, dtype=np.float64)
    K = _check_k(outs, anchor_index)
    return 0.5 * sum(gaussian_symmetric_kl(outs[anchor_index], outs[k]) for k in range(K) if k != anchor_index)


def gaussian_similarity_grad(outs, anchor_index: int = 0) -> np.ndarray:
    outs = np.asarray(outs, dtype=np.float64)
    K = _check_k(outs, anchor_index)
    grad = np.zeros_like(outs)
    for k in range(K):
        if k == anchor_index:
            continue
        ga, gk = gaussian_symmetric_kl_grad(outs[anchor_index], outs[k])
        grad[anchor_index] += 0.5 * ga
        grad[k] += 0.5 * gk
    return grad
