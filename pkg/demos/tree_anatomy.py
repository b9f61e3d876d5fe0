"""What the tree serialization actually looks like, symbol by symbol.

Takes eight hand-placed voxels on an 8^3 grid, serializes their
occupancy tree breadth-first, prints every level in binary, checks the
decodability cascade by hand, and reconstructs the points from nothing
but the symbol stream.
"""

import numpy as np

from kpcc.cluster import Cluster
from kpcc.ktree import build_sequence, default_schedule, reconstruct_points

# A tiny L-shaped arrangement: a run along x, a run up z, one outlier.
points = np.array([
    [0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0],
    [0, 0, 1], [0, 0, 2], [0, 0, 3],
    [7, 7, 7],
])
cluster = Cluster.from_global(points)
print(f"{cluster.num_points} voxels, local depth {cluster.local_depth} "
      f"(an {1 << cluster.local_depth}^3 cell)")

# octree8 splits every level 2x2x2, so each symbol is an 8-bit occupancy
# mask over the children of one occupied cell. Child bit order is
# x-major: bit index = (ix*2 + iy)*2 + iz.
schedule = default_schedule(cluster.local_depth, "octree8")
seq = build_sequence(cluster, schedule)
print(f"schedule: {schedule.levels}, symbols total: {len(seq)}")
print()

pos = 0
for level, count in enumerate(seq.level_counts):
    block = seq.symbols[pos:pos + count]
    pos += count
    rendered = " ".join(f"{int(s):08b}" for s in block)
    kids = int(np.bitwise_count(block).sum())
    print(f"level {level}: {count} symbols [{rendered}] -> {kids} children")

# That arrow chain is the decodability invariant: the popcounts of one
# level are the symbol count of the next, so a decoder always knows how
# many symbols remain. The final level's popcounts are the point count.
assert seq.point_count == cluster.num_points
print(f"\nlast level popcounts = {seq.point_count} points, as promised")

# Reconstruction consumes only the symbols and the schedule; no
# coordinates, counts, or offsets are stored per point.
restored = reconstruct_points(seq)
assert np.array_equal(restored, cluster.local_coords)
print("reconstructed voxels match the input exactly")

# The whole cloud above costs this many symbols at 8 bits of alphabet
# each; the entropy coder then prices each symbol by its predicted
# probability, which is where the actual compression happens.
print(f"serialized form: {len(seq)} symbols for {cluster.num_points} points")
