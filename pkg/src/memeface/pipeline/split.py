"""Per-cluster stratified train/test split with largest-remainder rounding.

The overall train count is exactly floor(train_fraction * N); per-cluster
counts start at the floors of their quotas and the leftover goes to the
largest fractional remainders. Singleton clusters always land in train.
"""

from __future__ import annotations

import numpy as np

from ..data import DatasetManifest


def apportion_train_counts(
    sizes: dict[int, int], train_fraction: float
) -> dict[int, int]:
    n = sum(sizes.values())
    target = int(np.floor(train_fraction * n))
    quotas = {c: train_fraction * s for c, s in sizes.items()}
    counts = {c: int(np.floor(q)) for c, q in quotas.items()}
    leftover = target - sum(counts.values())
    order = sorted(
        sizes, key=lambda c: (-(quotas[c] - counts[c]), -sizes[c], c)
    )
    for c in order:
        if leftover <= 0:
            break
        if counts[c] < sizes[c]:
            counts[c] += 1
            leftover -= 1
    # singletons must train; pull the compensation from the most over-quota cluster
    for c, s in sizes.items():
        if s == 1 and counts[c] == 0:
            counts[c] = 1
            donors = [
                d for d in sizes
                if counts[d] >= 1 and sizes[d] > 1 and d != c
            ]
            if donors:
                donor = max(donors, key=lambda d: (counts[d] - quotas[d], sizes[d], -d))
                counts[donor] -= 1
    return counts


def split_manifest(
    manifest: DatasetManifest,
    train_fraction: float = 0.9,
    seed: int = 0,
    log: list | None = None,
) -> DatasetManifest:
    """Tags every sample with a split in place and returns the manifest."""
    if len(manifest.samples) < 2:
        raise ValueError("need at least two samples to split")
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError("train_fraction must lie in (0, 1]")
    by_cluster: dict[int, list[int]] = {}
    for i, s in enumerate(manifest.samples):
        by_cluster.setdefault(s.cluster_id, []).append(i)
    sizes = {c: len(v) for c, v in by_cluster.items()}
    counts = apportion_train_counts(sizes, train_fraction)
    rng = np.random.default_rng(seed)
    for c in sorted(by_cluster):
        members = by_cluster[c]
        order = rng.permutation(len(members))
        n_train = counts[c]
        if sizes[c] == 1 and log is not None:
            log.append(f"cluster {c}: singleton forced into train")
        for rank, j in enumerate(order):
            manifest.samples[members[j]].split = (
                "train" if rank < n_train else "test"
            )
    return manifest
