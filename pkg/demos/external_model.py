"""Plugging an out-of-process probability model into the codec.

The external_bridge model runs any executable as the source of
next-token CDFs, speaking a small length-prefixed protocol on stdio
(docs/bridge-protocol.md). This script writes a complete conforming
peer to a temp file, about forty lines of stdlib Python serving uniform
CDFs, then compresses through it and decodes back.
"""

import os
import sys
import tempfile

from kpcc import decode_cloud, encode_cloud, synthgen

PEER = '''
import struct, sys

def read_exact(n):
    buf = b""
    while len(buf) < n:
        chunk = sys.stdin.buffer.read(n - len(buf))
        if not chunk:
            sys.exit(0)
        buf += chunk
    return buf

def reply(msg_type, body=b""):
    sys.stdout.buffer.write(struct.pack("<IB", 1 + len(body), msg_type) + body)
    sys.stdout.buffer.flush()

vocab = None
while True:
    (length,) = struct.unpack("<I", read_exact(4))
    frame = read_exact(length)
    kind, body = frame[0], frame[1:]
    if kind == 0x01:                       # INIT: echo the vocab
        vocab = struct.unpack("<IB", body)[0]
        reply(0x81, struct.pack("<I", vocab))
    elif kind == 0x02:                     # RESET: we keep no state anyway
        reply(0x82)
    elif kind == 0x03:                     # PUSH: a real model would learn here
        reply(0x83)
    elif kind == 0x04:                     # GETCDF: uniform over the vocab
        cum = [i * 65536 // vocab for i in range(vocab + 1)]
        reply(0x84, struct.pack(f"<{vocab + 1}I", *cum))
    else:
        reply(0xFF, b"\\x01")
'''

cloud = synthgen.gen("boxes", 7, seed=3, count=4)
print(f"input: {cloud.num_points} points")

with tempfile.TemporaryDirectory() as tmp:
    peer_path = os.path.join(tmp, "uniform_peer.py")
    with open(peer_path, "w") as fh:
        fh.write(PEER)
    cmd = f"{sys.executable} {peer_path}"

    # The command can come from the model params...
    blob = encode_cloud(cloud, model_id="external_bridge",
                        model_params={"cmd": cmd})
    print(f"compressed through the subprocess peer: {len(blob)} bytes")
    assert decode_cloud(blob, model_params={"cmd": cmd}) == cloud
    print("decoded through a second peer process: exact match")

    # ...or from the environment, which is how a shell pipeline or the
    # CLI would normally wire it up.
    os.environ["KPCC_BRIDGE_CMD"] = cmd
    try:
        blob_env = encode_cloud(cloud, model_id="external_bridge")
        assert blob_env == blob
        print("KPCC_BRIDGE_CMD produces byte-identical output")
    finally:
        del os.environ["KPCC_BRIDGE_CMD"]

# This peer predicts nothing, so it compresses like the built-in uniform
# model; the point is the plumbing. A real peer keeps the pushed context
# and returns sharper CDFs, and everything else stays the same.
baseline = encode_cloud(cloud, model_id="uniform")
print(f"built-in uniform model for comparison: {len(baseline)} bytes")
