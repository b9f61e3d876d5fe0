"""A first compression round-trip, end to end.

Generates a synthetic cloud, compresses it losslessly, decodes it back,
and checks the result is bit-for-bit the same point set. Along the way
it pulls the container apart to show where the bytes actually go.
"""

import numpy as np

from kpcc import decode_cloud, encode_cloud, synthgen
from kpcc.container import read_container

# A hollow sphere shell on a 256^3 grid (bit depth 8). Deterministic in
# (shape, depth, seed), so this script prints the same numbers every run.
cloud = synthgen.gen("sphere", 8, seed=7, samples=200000)
print(f"input: {cloud.num_points} points on a {1 << cloud.bit_depth}^3 grid")

# Raw size if we just wrote xyz as 3 bytes each (depth 8 fits in a byte).
raw_bytes = 3 * cloud.num_points
print(f"raw xyz would take {raw_bytes} bytes")

# Compress. The adaptive context model learns occupancy statistics as it
# goes; no training, no side files.
blob = encode_cloud(cloud, num_clusters=4, model_id="adaptive_ctx")
bpp = 8 * len(blob) / cloud.num_points
print(f"compressed: {len(blob)} bytes = {bpp:.3f} bits per point "
      f"({raw_bytes / len(blob):.1f}x smaller than raw)")

# Decode and verify. Equality here means the exact same point set: the
# codec is lossless, not approximately lossless.
restored = decode_cloud(blob)
assert restored == cloud
print("decoded cloud == input cloud")

# Where did the bytes go? The container is a small header plus one
# entropy-coded payload per (cluster, chunk).
parsed = read_container(blob)
payload = sum(len(c.payload) for cl in parsed.clusters for c in cl.chunks)
chunks = sum(len(cl.chunks) for cl in parsed.clusters)
print(f"container: {len(parsed.clusters)} clusters, {chunks} chunks, "
      f"{payload} payload bytes, {len(blob) - payload} bytes of framing")

# The same cloud at a single cluster and one huge chunk: fewer model
# resets, so the adaptive model keeps its learned statistics longer.
blob_one = encode_cloud(cloud, num_clusters=1, max_chunk_len=1 << 20,
                        model_id="adaptive_ctx")
print(f"single-cluster, single-chunk: {len(blob_one)} bytes "
      f"({8 * len(blob_one) / cloud.num_points:.3f} bpp)")
