"""Deterministic k-means partitioning and offset normalization.

The decoder never re-runs clustering (offsets travel in the stream), so the
only hard requirement is determinism: identical input always yields the
identical partition, on any platform. All distance math is exact int64
squared Euclidean; centroids are integer (rounded mean, halves toward
+infinity) so no float enters the loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError, ParameterError
from .pointcloud import PointCloud

MAX_LLOYD_ITERS = 50

# Points-per-block cap for the distance matrix so large clouds with many
# centroids do not allocate N x k x 3 at once.
_BLOCK = 1 << 16


@dataclass(frozen=True)
class Cluster:
    """A normalized cluster: global = offset + local, min(local, axis) = 0."""

    offset: tuple[int, int, int]
    local_coords: np.ndarray  # (M, 3) int64, canonical lexicographic order
    local_depth: int

    @staticmethod
    def from_global(coords: np.ndarray) -> "Cluster":
        """Normalize a set of global coordinates into a Cluster."""
        coords = np.asarray(coords, dtype=np.int64)
        offset = coords.min(axis=0)
        local = np.unique(coords - offset, axis=0)
        top = int(local.max())
        local.setflags(write=False)
        return Cluster(
            offset=(int(offset[0]), int(offset[1]), int(offset[2])),
            local_coords=local,
            local_depth=max(1, top.bit_length()),
        )

    @property
    def num_points(self) -> int:
        return int(self.local_coords.shape[0])

    def global_coords(self) -> np.ndarray:
        return self.local_coords + np.asarray(self.offset, dtype=np.int64)


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[Cluster, ...]
    source_depth: int


def _assign(coords: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid assignment, ties to the lower centroid index."""
    out = np.empty(coords.shape[0], dtype=np.int64)
    for start in range(0, coords.shape[0], _BLOCK):
        block = coords[start : start + _BLOCK]
        diff = block[:, None, :] - centroids[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        # argmin returns the first minimum, which is the lowest index.
        out[start : start + _BLOCK] = np.argmin(d2, axis=1)
    return out


def _rounded_mean(sums: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Exact integer mean, halves toward +infinity: floor((2s + n) / (2n))."""
    n = counts[:, None]
    return (2 * sums + n) // (2 * n)


def cluster_points(pc: PointCloud, num_clusters: int, seed: int = 0) -> ClusterSet:
    """Partition a cloud with deterministic k-means and normalize offsets.

    Centroids start with farthest-point sampling seeded at the
    lexicographically smallest point, then Lloyd iterations run until the
    assignment stops changing or 50 rounds pass. Clusters that end up empty
    are dropped, so the result may hold fewer than num_clusters clusters.

    Args:
        pc: source cloud.
        num_clusters: target cluster count, 1 <= k <= pc.num_points.
        seed: accepted for interface stability; the pinned algorithm is
            fully deterministic, so it never changes the result.

    Returns:
        ClusterSet ordered by offset (lexicographic), ties by size descending.

    Raises:
        ParameterError: num_clusters out of range.
    """
    del seed
    if not 1 <= num_clusters <= pc.num_points:
        raise ParameterError(
            f"num_clusters must be in [1, {pc.num_points}], got {num_clusters}"
        )
    coords = pc.coords

    # Farthest-point init. coords[0] is the lexicographic minimum because
    # PointCloud keeps canonical order.
    centroids = np.empty((num_clusters, 3), dtype=np.int64)
    centroids[0] = coords[0]
    diff = coords - centroids[0]
    best_d2 = np.einsum("ij,ij->i", diff, diff)
    for i in range(1, num_clusters):
        centroids[i] = coords[np.argmax(best_d2)]
        diff = coords - centroids[i]
        best_d2 = np.minimum(best_d2, np.einsum("ij,ij->i", diff, diff))

    assign = _assign(coords, centroids)
    for _ in range(MAX_LLOYD_ITERS):
        counts = np.bincount(assign, minlength=num_clusters)
        sums = np.stack(
            [np.bincount(assign, weights=coords[:, a], minlength=num_clusters)
             for a in range(3)],
            axis=1,
        ).astype(np.int64)
        occupied = counts > 0
        # A centroid that lost every point keeps its position; it may win
        # points back in a later round, otherwise it is dropped at the end.
        centroids[occupied] = _rounded_mean(sums[occupied], counts[occupied])
        new_assign = _assign(coords, centroids)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    clusters = [
        Cluster.from_global(coords[assign == cid])
        for cid in range(num_clusters)
        if np.any(assign == cid)
    ]
    # Disjoint clusters always differ in their smallest global point, which
    # makes this key a strict total order.
    clusters.sort(
        key=lambda c: (
            c.offset,
            -c.num_points,
            tuple((c.local_coords[0] + np.asarray(c.offset)).tolist()),
        )
    )
    return ClusterSet(clusters=tuple(clusters), source_depth=pc.bit_depth)


def merge_clusters(cs: ClusterSet) -> PointCloud:
    """Rebuild the original cloud from offsets and local coordinates.

    Raises:
        IntegrityError: two clusters claim the same global coordinate,
            which signals a corrupted stream.
    """
    parts = [c.global_coords() for c in cs.clusters]
    merged = np.concatenate(parts, axis=0)
    unique = np.unique(merged, axis=0)
    if unique.shape[0] != merged.shape[0]:
        raise IntegrityError("clusters overlap in global coordinates")
    return PointCloud(unique, cs.source_depth)
