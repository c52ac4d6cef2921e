"""Uncertainty-guided blending of sampled candidate trajectories."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

NOISE = -1


def dbscan(points, eps: float, min_pts: int = 2) -> np.ndarray:
    """Density clustering over Euclidean distance; noise points are labelled -1.

    A point is core if its closed ``eps``-ball holds at least ``min_pts``
    points (itself included). Clusters are numbered in order of discovery.
    """
    X = np.asarray(points, dtype=np.float64).reshape(len(points), -1)
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = len(X)
    d2 = np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=-1)
    neigh = [np.flatnonzero(d2[i] <= eps * eps) for i in range(n)]
    core = np.array([len(nb) >= min_pts for nb in neigh], dtype=bool)
    labels = np.full(n, NOISE, dtype=int)
    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            if not core[j]:
                continue
            for k in neigh[j]:
                if labels[k] == NOISE:
                    labels[k] = cluster
                    queue.append(k)
        cluster += 1
    return labels


def cluster_candidates(actions, eps: float = 0.5, min_pts: int = 2) -> np.ndarray:
    """DBSCAN labels with every noise point promoted to its own singleton cluster."""
    labels = dbscan(actions, eps, min_pts)
    nxt = labels.max() + 1 if len(labels) else 0
    out = labels.copy()
    for i in np.flatnonzero(labels == NOISE):
        out[i] = nxt
        nxt += 1
    return out


def typicality(labels, k: int) -> float:
    labels = np.asarray(labels)
    return float(np.sum(labels == labels[k]) / len(labels))


def composite_confidence(tfds, typ, eta_temp: float = 5.0):
    """exp(-eta * U) * typicality (vectorised)."""
    if eta_temp <= 0:
        raise ValueError("temperature must be positive")
    tfds = np.asarray(tfds, dtype=np.float64)
    if np.any(tfds < 0):
        raise ValueError("TFDS scores must be nonnegative")
    return np.exp(-eta_temp * tfds) * np.asarray(typ, dtype=np.float64)


@dataclass
class CandidateSet:
    actions: np.ndarray
    tfds_scores: np.ndarray
    cluster_labels: np.ndarray = None
    weights: np.ndarray = None
    typicalities: np.ndarray = None
    fallback_uniform: bool = False
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.float64).reshape(len(self.actions), -1)
        self.tfds_scores = np.asarray(self.tfds_scores, dtype=np.float64)
        if len(self.tfds_scores) != len(self.actions):
            raise ValueError("one TFDS score per candidate")

    @property
    def K(self) -> int:
        return len(self.actions)

    def to_dict(self) -> dict:
        return {
            "tfds": self.tfds_scores.tolist(),
            "labels": None if self.cluster_labels is None else self.cluster_labels.tolist(),
            "typicality": None if self.typicalities is None else self.typicalities.tolist(),
            "weights": None if self.weights is None else self.weights.tolist(),
            "fallback_uniform": self.fallback_uniform,
        }


def score_candidates(cands: CandidateSet, eps: float = 0.5, min_pts: int = 2,
                     eta_temp: float = 5.0) -> CandidateSet:
    """Fill in cluster labels, typicalities and composite weights in place."""
    labels = cluster_candidates(cands.actions, eps, min_pts)
    typ = np.array([typicality(labels, k) for k in range(cands.K)])
    cands.cluster_labels = labels
    cands.typicalities = typ
    cands.weights = composite_confidence(cands.tfds_scores, typ, eta_temp)
    return cands


def blend(cands: CandidateSet, within_top_cluster: bool = False) -> np.ndarray:
    """Confidence-weighted average of the candidates.

    Falls back to the uniform mean (and sets ``fallback_uniform``) when every
    weight underflows to zero. With ``within_top_cluster`` only the cluster of
    the highest-weight candidate contributes.
    """
    if cands.weights is None:
        raise ValueError("score the candidates before blending")
    w = np.asarray(cands.weights, dtype=np.float64).copy()
    if within_top_cluster and cands.cluster_labels is not None:
        top = cands.cluster_labels[int(np.argmax(w))]
        w = np.where(cands.cluster_labels == top, w, 0.0)
    A = cands.actions
    if not np.all(np.isfinite(w)) or not np.any(w > 0.0):
        cands.fallback_uniform = True
        w = np.ones(len(A))
    # canonical order makes the floating-point result independent of the input order
    order = np.lexsort(np.vstack([w[None, :], A.T[::-1]]))
    out, acc = None, 0.0
    for k in order:
        if w[k] <= 0.0:
            continue
        acc += w[k]
        if out is None:
            out = A[k].copy()
        else:
            out = out + (w[k] / acc) * (A[k] - out)
    return np.clip(out, A.min(axis=0), A.max(axis=0))
