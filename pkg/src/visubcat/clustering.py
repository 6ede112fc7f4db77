"""k-means with k-means++ seeding, plus the aspect-ratio splitting baseline."""
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .kernels import nearest_center


@dataclass
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray
    sse: float
    history: List[float] = field(default_factory=list)  # sse after each Lloyd step


def whiten(X, eps=1e-12):
    """Per-dimension standardisation; returns (whitened, mean, scale)."""
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > eps, scale, 1.0)
    return (X - mean) / scale, mean, scale


def _plusplus(X, K, rng):
    n = X.shape[0]
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for k in range(1, K):
        total = d2.sum()
        if total > 0.0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[k] = X[idx]
        d2 = np.minimum(d2, ((X - centers[k]) ** 2).sum(axis=1))
    return centers


def _update(X, labels, dist, K):
    """Recompute means; an empty cluster takes the point farthest from its centroid."""
    labels = labels.copy()
    dist = dist.copy()
    counts = np.bincount(labels, minlength=K)
    for k in range(K):
        if counts[k] > 0:
            continue
        donors = counts[labels] > 1
        cand = np.where(donors, dist, -1.0)
        i = int(np.argmax(cand))
        counts[labels[i]] -= 1
        labels[i] = k
        dist[i] = 0.0
        counts[k] = 1
    centers = np.zeros((K, X.shape[1]))
    np.add.at(centers, labels, X)
    centers /= counts[:, None]
    return centers, labels


def _sse(X, labels, centers):
    return float(((X - centers[labels]) ** 2).sum())


def _lloyd(X, K, max_iter, rng):
    centers = _plusplus(X, K, rng)
    labels, dist = nearest_center(X, centers)
    history = [float(dist.sum())]
    for _ in range(max_iter):
        centers, labels = _update(X, labels, dist, K)
        history.append(_sse(X, labels, centers))
        new_labels, dist = nearest_center(X, centers)
        history.append(float(dist.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    else:
        centers, labels = _update(X, labels, dist, K)
        history.append(_sse(X, labels, centers))
    return ClusterResult(labels, centers, _sse(X, labels, centers), history)


def kmeans(points, K, restarts=10, max_iter=100, seed=0):
    """Best-of-``restarts`` Lloyd k-means with k-means++ seeding.

    Restart r draws from the r-th child of ``SeedSequence(seed)``, so results
    do not depend on how restarts are scheduled. Ties on sse go to the earliest
    restart.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("points must be a list of equal-length vectors")
    if K < 1:
        raise ValueError("K must be >= 1")
    if X.shape[0] < K:
        raise ValueError(f"need at least K={K} points, got {X.shape[0]}")
    best = None
    for child in np.random.SeedSequence(seed).spawn(max(1, restarts)):
        res = _lloyd(X, K, max_iter, np.random.default_rng(child))
        if best is None or res.sse < best.sse:
            best = res
    return best


def aspect_ratio_split(boxes, K):
    """Split boxes into K contiguous groups of sorted width/height ratio.

    Group sizes differ by at most one, with the remainder going to the
    earliest groups; equal ratios keep input order.
    """
    n = len(boxes)
    if K < 1:
        raise ValueError("K must be >= 1")
    if n < K:
        raise ValueError(f"need at least K={K} boxes, got {n}")
    order = sorted(range(n), key=lambda i: (boxes[i].aspect, i))
    base, extra = divmod(n, K)
    out = np.empty(n, dtype=np.int64)
    pos = 0
    for k in range(K):
        size = base + (1 if k < extra else 0)
        for i in order[pos:pos + size]:
            out[i] = k
        pos += size
    return out
