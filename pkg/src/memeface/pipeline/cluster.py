"""Hand-rolled k-means (k-means++ seeding, Lloyd iterations) and outlier removal.

Written out longhand rather than delegated so the per-iteration inertia
trace is observable and asserted non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class KMeansResult:
    assignments: np.ndarray           # [N] int
    centroids: np.ndarray             # [k, D]
    inertia_history: list[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1] if self.inertia_history else float("nan")


def _pairwise_sq(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # ||x-c||^2 via the expanded form would lose precision; do it directly
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = x[first]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))  # all points identical to chosen centroids
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[i] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[i]) ** 2).sum(axis=1))
    return centroids


def kmeans_cluster(
    vectors: np.ndarray, k: int, seed: int = 0, max_iters: int = 100
) -> KMeansResult:
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("vectors must be a [N, D] matrix")
    n = x.shape[0]
    if k <= 0:
        raise ValueError("k must be positive")
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} available vectors")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(x, k, rng)
    result = KMeansResult(assignments=np.zeros(n, dtype=int), centroids=centroids)
    prev_assign = None
    for it in range(max_iters):
        d2 = _pairwise_sq(x, centroids)
        assign = d2.argmin(axis=1)
        inertia = float(d2[np.arange(n), assign].sum())
        if result.inertia_history and inertia > result.inertia_history[-1] + 1e-9:
            raise AssertionError(
                f"inertia increased at iteration {it}: "
                f"{result.inertia_history[-1]} -> {inertia}"
            )
        result.inertia_history.append(inertia)
        result.iterations = it + 1
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign
        new_centroids = centroids.copy()
        for c in range(k):
            members = x[assign == c]
            if len(members):
                new_centroids[c] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the worst-covered point;
                # reassignment next round can only lower inertia further
                far = int(d2[np.arange(n), assign].argmax())
                new_centroids[c] = x[far]
        centroids = new_centroids
    result.assignments = prev_assign if prev_assign is not None else assign
    result.centroids = centroids
    return result


def remove_outliers(
    assignments: np.ndarray,
    vectors: np.ndarray,
    centroids: np.ndarray,
    z_threshold: float = 2.5,
    min_cluster_size: int = 1,
    log: list | None = None,
) -> np.ndarray:
    """Returns assignments with dropped samples marked -1.

    A sample is dropped when its distance to its centroid strictly exceeds
    the cluster's mean + z_threshold * stddev; clusters that end up below
    min_cluster_size are dropped whole.
    """
    x = np.asarray(vectors, dtype=np.float64)
    out = np.asarray(assignments).copy()
    for c in np.unique(out[out >= 0]):
        members = np.flatnonzero(out == c)
        dist = np.sqrt(((x[members] - centroids[c]) ** 2).sum(axis=1))
        cut = dist.mean() + z_threshold * dist.std()
        far = members[dist > cut]
        out[far] = -1
        if len(far) and log is not None:
            log.append(f"cluster {c}: dropped {len(far)} outliers beyond {cut:.4f}")
    for c in np.unique(out[out >= 0]):
        members = np.flatnonzero(out == c)
        if len(members) < min_cluster_size:
            out[members] = -1
            if log is not None:
                log.append(
                    f"cluster {c}: dropped entirely ({len(members)} < {min_cluster_size})"
                )
    return out
