"""Lloyd k-means with k-means++ seeding and best-of-restarts selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.cluster import kmeans_plusplus

from .errors import ParameterError


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray      # 1-based, renumbered by first occurrence
    centroids: np.ndarray   # row c-1 belongs to cluster c
    inertia: float


def canonical_labels(labels) -> np.ndarray:
    """Renumber cluster ids 1..K in order of first appearance."""
    labels = np.asarray(labels)
    mapping = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels.tolist()):
        if lab not in mapping:
            mapping[lab] = len(mapping) + 1
        out[i] = mapping[lab]
    return out


def _sq_dists(x, c):
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _lloyd(x, centers, max_iter=300, rel_tol=1e-10):
    k = centers.shape[0]
    prev = np.inf
    for _ in range(max_iter):
        d = _sq_dists(x, centers)
        lab = d.argmin(axis=1)
        best = d[np.arange(len(x)), lab]
        counts = np.bincount(lab, minlength=k)
        for c in np.flatnonzero(counts == 0):
            # move the point farthest from its centroid into the empty cluster
            far = int(best.argmax())
            counts[lab[far]] -= 1
            lab[far] = c
            counts[c] = 1
            best[far] = 0.0
        centers = np.zeros_like(centers)
        np.add.at(centers, lab, x)
        centers /= counts[:, None]
        inertia = float(((x - centers[lab]) ** 2).sum())
        if prev - inertia <= rel_tol * max(prev, 1e-300) or inertia == 0.0:
            prev = inertia
            break
        prev = inertia
    return lab, centers, prev


def kmeans(points, k: int, seed: int = 0, restarts: int = 10) -> KMeansResult:
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if k < 1 or k > len(x):
        raise ParameterError(f"k={k} must lie in 1..{len(x)}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        state = int(rng.integers(2**31 - 1))
        centers, _ = kmeans_plusplus(x, n_clusters=k, random_state=state)
        lab, cen, inertia = _lloyd(x, centers.astype(float))
        if best is None or inertia < best[2] - 1e-12 * max(1.0, best[2]):
            best = (lab, cen, inertia)
    lab, cen, inertia = best
    canon = canonical_labels(lab)
    order = np.empty(k, dtype=np.int64)
    for old, new in zip(lab.tolist(), canon.tolist()):
        order[new - 1] = old
    return KMeansResult(canon, cen[order], inertia)
