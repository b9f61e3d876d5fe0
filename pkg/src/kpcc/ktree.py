"""K-ary occupancy tree serialization and ancestor-free reconstruction.

A cluster's local grid is subdivided level by level according to a split
schedule; each occupied cell emits one K-bit occupancy symbol (bit c set
iff subcell c holds at least one point) and symbols are laid out in
breadth-first order. Because breadth-first order over a fixed subdivision
equals lexicographic order of cell paths, both directions are implemented
with sorts and reductions instead of an explicit queue; the queue semantics
are what the format guarantees, and tests pin the equivalence against a
naive queue-based oracle.

Child index convention (normative, x-major): c = (ix*sy + iy)*sz + iz.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cluster import Cluster
from .errors import DomainError, IntegrityError, ParameterError

K_MODES = ("octree8", "mixed12")


@dataclass(frozen=True)
class SplitSchedule:
    """Per-level (sx, sy, sz) split factors; K per level = sx*sy*sz."""

    levels: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        if not self.levels:
            raise ParameterError("schedule needs at least one level")
        for lev, (sx, sy, sz) in enumerate(self.levels):
            if min(sx, sy, sz) < 1:
                raise ParameterError(f"level {lev}: split factors must be >= 1")
            k = sx * sy * sz
            if not 2 <= k <= 16:
                raise ParameterError(f"level {lev}: K={k} outside [2, 16]")

    @property
    def k_values(self) -> tuple[int, ...]:
        return tuple(sx * sy * sz for sx, sy, sz in self.levels)

    @property
    def extents(self) -> tuple[int, int, int]:
        """Root cell size (product of factors per axis)."""
        ext = [1, 1, 1]
        for sx, sy, sz in self.levels:
            ext[0] *= sx
            ext[1] *= sy
            ext[2] *= sz
        return tuple(ext)


def default_schedule(local_depth: int, k_mode: str) -> SplitSchedule:
    """The canonical schedule for a cluster depth.

    octree8 gives local_depth levels of (2,2,2). mixed12 gives local_depth
    levels of (2,2,3); its root z-extent 3^depth exceeds the 2^depth data
    extent, which pads z upward with empty space and never adds points.
    """
    if not 1 <= local_depth <= 16:
        raise ParameterError(f"local_depth must be in [1, 16], got {local_depth}")
    if k_mode == "octree8":
        return SplitSchedule(((2, 2, 2),) * local_depth)
    if k_mode == "mixed12":
        return SplitSchedule(((2, 2, 3),) * local_depth)
    raise ParameterError(f"unknown k_mode {k_mode!r}")


@dataclass(frozen=True)
class OccupancySequence:
    """Breadth-first occupancy symbols plus the schedule that shapes them.

    Construction validates the decodability invariant: the popcount sum of
    level L must equal the symbol count of level L+1, the whole array must
    be consumed exactly, and no symbol may be zero or overflow its level's
    alphabet. level_counts and point_count are derived during validation.
    """

    symbols: np.ndarray  # uint16, all levels concatenated
    schedule: SplitSchedule
    level_counts: tuple[int, ...] = field(init=False)
    point_count: int = field(init=False)

    def __post_init__(self):
        symbols = np.ascontiguousarray(np.asarray(self.symbols, dtype=np.uint16))
        symbols.setflags(write=False)
        object.__setattr__(self, "symbols", symbols)
        counts = []
        pos = 0
        expected = 1
        for lev, k in enumerate(self.schedule.k_values):
            block = symbols[pos : pos + expected]
            if block.shape[0] < expected:
                raise IntegrityError(
                    f"level {lev}: expected {expected} symbols, got {block.shape[0]}"
                )
            if block.shape[0] and int(block.min()) < 1:
                raise IntegrityError(f"level {lev}: zero occupancy symbol")
            if block.shape[0] and int(block.max()) >= (1 << k):
                raise IntegrityError(f"level {lev}: symbol exceeds K={k} alphabet")
            counts.append(expected)
            pos += expected
            expected = int(np.bitwise_count(block).sum())
        if pos != symbols.shape[0]:
            raise IntegrityError(
                f"{symbols.shape[0] - pos} trailing symbols after the last level"
            )
        object.__setattr__(self, "level_counts", tuple(counts))
        object.__setattr__(self, "point_count", expected)

    def __len__(self) -> int:
        return int(self.symbols.shape[0])


def _paths(coords: np.ndarray, schedule: SplitSchedule) -> np.ndarray:
    """(N, L) child indices of every point at every level, x-major bit order."""
    ext = schedule.extents
    n = coords.shape[0]
    out = np.empty((n, len(schedule.levels)), dtype=np.int64)
    rem = coords.astype(np.int64).copy()
    cell = np.asarray(ext, dtype=np.int64)
    for lev, (sx, sy, sz) in enumerate(schedule.levels):
        cell = cell // (sx, sy, sz)
        digit = rem // cell
        rem -= digit * cell
        out[:, lev] = (digit[:, 0] * sy + digit[:, 1]) * sz + digit[:, 2]
    return out


def build_sequence(cluster: Cluster, schedule: SplitSchedule) -> OccupancySequence:
    """Serialize a cluster's occupancy tree breadth-first.

    Args:
        cluster: normalized cluster (local min corner at the origin).
        schedule: must resolve the cluster's extent down to unit voxels.

    Returns:
        OccupancySequence with one symbol per occupied cell, level by level,
        cells in breadth-first (= path-lexicographic) order.

    Raises:
        DomainError: a point falls outside the schedule's root cell.
        ParameterError: the schedule does not resolve unit voxels.
    """
    coords = cluster.local_coords
    ext = schedule.extents
    if any((coords[:, a].max() >= ext[a]) for a in range(3)):
        raise DomainError(
            f"cluster extent {tuple(int(coords[:, a].max()) for a in range(3))} "
            f"outside root cell {ext}"
        )
    paths = _paths(coords, schedule)
    # Sort points by full path; each level's cells are then contiguous runs
    # of equal path prefixes, already in breadth-first order.
    order = np.lexsort(tuple(paths[:, lev] for lev in reversed(range(paths.shape[1]))))
    paths = paths[order]
    if paths.shape[0] > 1 and not np.all(np.any(np.diff(paths, axis=0) != 0, axis=1)):
        # Every schedule resolves its own root cell to unit voxels, so a
        # duplicated full path can only mean duplicated input points.
        raise DomainError("cluster has duplicate local coordinates")

    blocks = []
    new_group = np.zeros(paths.shape[0], dtype=bool)
    starts = np.array([0], dtype=np.int64)  # level 0: one run, the root
    for lev in range(paths.shape[1]):
        bits = np.left_shift(np.uint16(1), paths[:, lev].astype(np.uint16))
        blocks.append(np.bitwise_or.reduceat(bits, starts))
        if lev + 1 < paths.shape[1]:
            new_group = new_group | np.concatenate(
                ([True], paths[1:, lev] != paths[:-1, lev])
            )
            starts = np.flatnonzero(new_group)
    return OccupancySequence(np.concatenate(blocks), schedule)


def reconstruct_points(seq: OccupancySequence) -> np.ndarray:
    """Invert build_sequence without ancestor metadata.

    Child counts at each level come from parent popcounts alone (the
    decodability cascade); OccupancySequence construction has already
    verified that cascade, so a malformed symbol stream never reaches the
    walk below.

    Returns:
        (M, 3) int64 array of local coordinates, canonical lexicographic
        order.
    """
    schedule = seq.schedule
    origins = np.zeros((1, 3), dtype=np.int64)
    cell = np.asarray(schedule.extents, dtype=np.int64)
    pos = 0
    for count, (sx, sy, sz) in zip(seq.level_counts, schedule.levels):
        block = seq.symbols[pos : pos + count]
        pos += count
        k = sx * sy * sz
        # Row-major nonzero order = parents in BFS order, bits ascending:
        # exactly the enqueue order of the format.
        bit_matrix = (block[:, None] >> np.arange(k, dtype=np.uint16)) & 1
        parent_idx, child = np.nonzero(bit_matrix)
        cell = cell // (sx, sy, sz)
        dx = child // (sy * sz)
        dy = (child // sz) % sy
        dz = child % sz
        steps = np.stack([dx, dy, dz], axis=1).astype(np.int64) * cell
        origins = origins[parent_idx] + steps
    return np.unique(origins, axis=0)
