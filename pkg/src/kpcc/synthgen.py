"""Deterministic synthetic clouds and a naive reference tree serializer.

The generators feed tests and benchmarks. oracle_sequence is a deliberately
slow pure-Python reimplementation of occupancy-tree serialization used to
cross-check the vectorized path in ktree; it shares no code with it
(recursion over Python tuples, then a stable breadth-first re-sort).
"""

from __future__ import annotations

import numpy as np

from .cluster import Cluster
from .errors import ParameterError
from .ktree import SplitSchedule
from .pointcloud import PointCloud, round_half_up

SHAPES = ("sphere", "plane", "boxes", "blobs", "full", "noise")


def gen(shape: str, bit_depth: int, seed: int = 0, **params) -> PointCloud:
    """Generate a synthetic voxel cloud, deterministic in all arguments.

    Shapes and their optional params:
        sphere: spherical shell. radius (voxels, default 0.45 * grid),
            samples (default 16 * grid^2 directions).
        plane:  tilted plane z = a*x + b*y + c over the full x/y grid;
            a, b default to small random tilts, c random.
        boxes:  union of `count` (default 3) filled axis-aligned boxes
            with random corners, sides up to `max_size` (default grid/6).
        blobs:  `count` (default 4) round gaussian blobs, `per_blob`
            (default 200) samples each.
        full:   every voxel of the grid (8^bit_depth points).
        noise:  `count` (default 5% of grid cells, capped at 20000)
            uniform random voxels.

    Degenerate params collapse rather than fail: a sphere of radius 0 is a
    single voxel.
    """
    if shape not in SHAPES:
        raise ParameterError(f"unknown shape {shape!r}; choose from {SHAPES}")
    allowed = {
        "sphere": {"radius", "samples"},
        "plane": {"a", "b", "c"},
        "boxes": {"count", "max_size"},
        "blobs": {"count", "per_blob", "sigma"},
        "full": set(),
        "noise": {"count"},
    }[shape]
    unknown = set(params) - allowed
    if unknown:
        raise ParameterError(
            f"unknown params for shape {shape!r}: {sorted(unknown)}"
        )
    rng = np.random.default_rng([seed, SHAPES.index(shape), bit_depth])
    side = 1 << bit_depth
    top = side - 1

    if shape == "sphere":
        radius = float(params.get("radius", 0.45 * top))
        samples = int(params.get("samples", min(16 * side * side, 1 << 20)))
        center = top / 2.0
        dirs = rng.normal(size=(samples, 3))
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        pts = center + dirs / norms * radius
        coords = round_half_up(pts)
    elif shape == "plane":
        a = float(params.get("a", rng.uniform(-0.3, 0.3)))
        b = float(params.get("b", rng.uniform(-0.3, 0.3)))
        c = float(params.get("c", rng.uniform(0.25 * top, 0.75 * top)))
        xs, ys = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
        zs = round_half_up(a * xs.ravel() + b * ys.ravel() + c)
        coords = np.stack([xs.ravel(), ys.ravel(), zs], axis=1)
        coords = coords[(coords[:, 2] >= 0) & (coords[:, 2] <= top)]
    elif shape == "boxes":
        count = int(params.get("count", 3))
        max_size = int(params.get("max_size", max(2, side // 6)))
        parts = []
        for _ in range(max(1, count)):
            lo = rng.integers(0, max(1, side - 1), size=3)
            size = rng.integers(1, max_size + 1, size=3)
            hi = np.minimum(lo + size, side)
            grid = np.meshgrid(*[np.arange(lo[a], hi[a]) for a in range(3)],
                               indexing="ij")
            parts.append(np.stack([g.ravel() for g in grid], axis=1))
        coords = np.concatenate(parts, axis=0)
    elif shape == "blobs":
        count = int(params.get("count", 4))
        per_blob = int(params.get("per_blob", 200))
        sigma = float(params.get("sigma", side / 16.0))
        centers = rng.uniform(0.15 * top, 0.85 * top, size=(max(1, count), 3))
        parts = [rng.normal(loc=ctr, scale=sigma, size=(per_blob, 3))
                 for ctr in centers]
        coords = round_half_up(np.concatenate(parts, axis=0))
        coords = np.clip(coords, 0, top)
    elif shape == "full":
        grid = np.meshgrid(*[np.arange(side)] * 3, indexing="ij")
        coords = np.stack([g.ravel() for g in grid], axis=1)
    else:  # noise
        default = min(max(1, (side ** 3) // 20), 20000)
        count = int(params.get("count", default))
        coords = rng.integers(0, side, size=(count, 3))

    return PointCloud(coords.astype(np.int64), bit_depth)


def oracle_sequence(cluster: Cluster, schedule: SplitSchedule) -> list[int]:
    """Reference occupancy serialization: recursion plus a BFS re-sort.

    Subdivides cells depth-first with plain Python arithmetic, records
    (path, symbol) pairs, then sorts by (depth, path). Exists solely to
    validate ktree.build_sequence; intentionally has no numpy in the hot
    path and no shared helpers with ktree.
    """
    levels = list(schedule.levels)
    ext = [1, 1, 1]
    for sx, sy, sz in levels:
        ext[0] *= sx
        ext[1] *= sy
        ext[2] *= sz
    points = [tuple(int(v) for v in row) for row in cluster.local_coords]
    recorded: list[tuple[tuple[int, ...], int]] = []

    def descend(depth: int, cell: tuple[int, int, int],
                pts: list[tuple[int, int, int]], path: tuple[int, ...]) -> None:
        if depth == len(levels):
            return
        sx, sy, sz = levels[depth]
        cw = (cell[0] // sx, cell[1] // sy, cell[2] // sz)
        buckets: dict[int, list[tuple[int, int, int]]] = {}
        for x, y, z in pts:
            ix, iy, iz = x // cw[0], y // cw[1], z // cw[2]
            child = (ix * sy + iy) * sz + iz
            buckets.setdefault(child, []).append(
                (x - ix * cw[0], y - iy * cw[1], z - iz * cw[2])
            )
        symbol = 0
        for child in buckets:
            symbol |= 1 << child
        recorded.append((path, symbol))
        for child in sorted(buckets):
            descend(depth + 1, cw, buckets[child], path + (child,))

    descend(0, tuple(ext), points, ())
    recorded.sort(key=lambda item: (len(item[0]), item[0]))
    return [symbol for _, symbol in recorded]
