"""The compressed-file wire format.

Layout (all integers little-endian, no padding):

    magic "KPCC", version u8
    bit_depth u8, k_mode u8, schedule digest 8B
    model_id u8, model params digest 16B
    codebook ref: kind u8, then base_id u16 (kind 0, derived table)
                  or file digest 8B (kind 1, explicit table file)
    max_chunk_len u32, cluster_count u32
    per cluster:
        offset x,y,z u32 each, local_depth u8, chunk_count u16
        per chunk: chunk_index u16, token_count u32,
                   payload_len u32, payload bytes

Chunk records may be stored in any order; indices within a cluster must
be exactly 0..chunk_count-1. Payloads are opaque here. The two digests
let a reader refuse a file whose tree-splitting rule or probability model
does not match what it would use, since decoding with either wrong one
yields silent garbage rather than an error.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

from .errors import FormatError, IntegrityError
from .ktree import K_MODES, default_schedule
from .models import MODEL_IDS
from .pointcloud import MAX_BIT_DEPTH

MAGIC = b"KPCC"
VERSION = 1

CODEBOOK_DEFAULT = 0
CODEBOOK_FILE = 1


def canonical_digest(obj, size: int) -> bytes:
    """First `size` bytes of sha256 over a canonical JSON rendering."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).digest()[:size]


def schedule_digest(k_mode: str) -> bytes:
    """8-byte fingerprint of the depth -> split-factor rule for a k_mode.

    Covers every supported depth so any change to the derivation rule
    (not just the root level) invalidates old files.
    """
    table = {
        str(d): [list(f) for f in default_schedule(d, k_mode).levels]
        for d in range(1, MAX_BIT_DEPTH + 1)
    }
    return canonical_digest({"k_mode": k_mode, "levels": table}, 8)


def params_digest(model_id: str, digest_params: dict) -> bytes:
    """16-byte fingerprint of the model identity.

    digest_params must already be reduced to portable values (e.g. a
    weights-file hash rather than its path); the pipeline does that.
    """
    return canonical_digest({"model": model_id, "params": digest_params}, 16)


@dataclass(frozen=True)
class CodebookRef:
    kind: int  # CODEBOOK_DEFAULT or CODEBOOK_FILE
    base_id: int = 0  # kind 0
    file_digest: bytes = b""  # kind 1, 8 bytes

    @staticmethod
    def default(base_id: int) -> "CodebookRef":
        return CodebookRef(CODEBOOK_DEFAULT, base_id=base_id)

    @staticmethod
    def file(content: bytes) -> "CodebookRef":
        return CodebookRef(
            CODEBOOK_FILE, file_digest=hashlib.sha256(content).digest()[:8]
        )


@dataclass(frozen=True)
class ChunkRecord:
    chunk_index: int
    token_count: int
    payload: bytes


@dataclass(frozen=True)
class ClusterRecord:
    offset: tuple[int, int, int]
    local_depth: int
    chunks: tuple[ChunkRecord, ...]


@dataclass(frozen=True)
class ContainerHeader:
    bit_depth: int
    k_mode: str
    model_id: str
    model_digest: bytes
    codebook: CodebookRef
    max_chunk_len: int


@dataclass(frozen=True)
class CompressedFile:
    header: ContainerHeader
    clusters: tuple[ClusterRecord, ...]

    @property
    def total_payload_bytes(self) -> int:
        return sum(len(c.payload) for cl in self.clusters for c in cl.chunks)

    @property
    def total_chunks(self) -> int:
        return sum(len(cl.chunks) for cl in self.clusters)


def _validate(cf: CompressedFile) -> None:
    h = cf.header
    if not 1 <= h.bit_depth <= MAX_BIT_DEPTH:
        raise FormatError(f"bit_depth {h.bit_depth} outside 1..{MAX_BIT_DEPTH}")
    if h.k_mode not in K_MODES:
        raise FormatError(f"unknown k_mode {h.k_mode!r}")
    if h.model_id not in MODEL_IDS:
        raise FormatError(f"unknown model_id {h.model_id!r}")
    if len(h.model_digest) != 16:
        raise FormatError("model digest must be 16 bytes")
    if h.codebook.kind == CODEBOOK_DEFAULT:
        if not 0 < h.codebook.base_id < 1 << 16:
            raise FormatError(f"codebook base_id {h.codebook.base_id} not a u16")
    elif h.codebook.kind == CODEBOOK_FILE:
        if len(h.codebook.file_digest) != 8:
            raise FormatError("codebook file digest must be 8 bytes")
    else:
        raise FormatError(f"unknown codebook ref kind {h.codebook.kind}")
    if not 0 < h.max_chunk_len < 1 << 32:
        raise FormatError(f"max_chunk_len {h.max_chunk_len} not a positive u32")
    if len(cf.clusters) >= 1 << 32:
        raise FormatError("too many clusters for u32 count")
    for cl in cf.clusters:
        if len(cl.offset) != 3 or any(not 0 <= v < 1 << 32 for v in cl.offset):
            raise FormatError(f"cluster offset {cl.offset} does not fit 3 x u32")
        if not 1 <= cl.local_depth <= MAX_BIT_DEPTH:
            raise FormatError(f"local_depth {cl.local_depth} outside 1..{MAX_BIT_DEPTH}")
        if len(cl.chunks) >= 1 << 16:
            raise FormatError("too many chunks in one cluster for u16 count")
        indices = sorted(c.chunk_index for c in cl.chunks)
        if indices != list(range(len(cl.chunks))):
            raise FormatError(
                f"chunk indices {indices} are not exactly 0..{len(cl.chunks) - 1}"
            )
        for c in cl.chunks:
            if not 0 <= c.token_count < 1 << 32:
                raise FormatError(f"token_count {c.token_count} not a u32")
            if len(c.payload) >= 1 << 32:
                raise FormatError("payload too long for u32 length")


def write_container(cf: CompressedFile) -> bytes:
    """Serialize; deterministic bytes for identical parts.

    Raises:
        FormatError: any field out of range, or chunk indices that are
            not a permutation of 0..chunk_count-1.
    """
    _validate(cf)
    h = cf.header
    out = bytearray()
    out += MAGIC
    out += struct.pack(
        "<BBB", VERSION, h.bit_depth, K_MODES.index(h.k_mode)
    )
    out += schedule_digest(h.k_mode)
    out += struct.pack("<B", MODEL_IDS.index(h.model_id))
    out += h.model_digest
    out += struct.pack("<B", h.codebook.kind)
    if h.codebook.kind == CODEBOOK_DEFAULT:
        out += struct.pack("<H", h.codebook.base_id)
    else:
        out += h.codebook.file_digest
    out += struct.pack("<II", h.max_chunk_len, len(cf.clusters))
    for cl in cf.clusters:
        out += struct.pack("<IIIBH", *cl.offset, cl.local_depth, len(cl.chunks))
        for c in cl.chunks:
            out += struct.pack("<HII", c.chunk_index, c.token_count, len(c.payload))
            out += c.payload
    return bytes(out)


class _Cursor:
    """Bounds-checked little-endian reader."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IntegrityError(
                f"file ends at byte {len(self.data)}, "
                f"needed {self.pos + n} (truncated?)"
            )
        piece = self.data[self.pos : self.pos + n]
        self.pos += n
        return piece

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(data: bytes) -> CompressedFile:
    """Parse and validate; exact inverse of write_container.

    Raises:
        FormatError: wrong magic/version or out-of-range header fields.
        IntegrityError: truncation, trailing bytes, duplicate or gapped
            chunk indices.
    """
    cur = _Cursor(data)
    if cur.take(4) != MAGIC:
        raise FormatError("not a compressed point cloud file (bad magic)")
    version, bit_depth, k_mode_byte = cur.unpack("<BBB")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    if k_mode_byte >= len(K_MODES):
        raise FormatError(f"unknown k_mode code {k_mode_byte}")
    k_mode = K_MODES[k_mode_byte]
    sched_digest = cur.take(8)
    if sched_digest != schedule_digest(k_mode):
        raise IntegrityError(
            "schedule digest does not match this reader's splitting rule"
        )
    (model_byte,) = cur.unpack("<B")
    if model_byte >= len(MODEL_IDS):
        raise FormatError(f"unknown model code {model_byte}")
    model_digest = cur.take(16)
    (cb_kind,) = cur.unpack("<B")
    if cb_kind == CODEBOOK_DEFAULT:
        (base_id,) = cur.unpack("<H")
        codebook = CodebookRef(cb_kind, base_id=base_id)
    elif cb_kind == CODEBOOK_FILE:
        codebook = CodebookRef(cb_kind, file_digest=cur.take(8))
    else:
        raise FormatError(f"unknown codebook ref kind {cb_kind}")
    max_chunk_len, cluster_count = cur.unpack("<II")

    clusters = []
    for _ in range(cluster_count):
        ox, oy, oz, local_depth, chunk_count = cur.unpack("<IIIBH")
        chunks = []
        seen = set()
        for _ in range(chunk_count):
            chunk_index, token_count, payload_len = cur.unpack("<HII")
            if chunk_index in seen:
                raise IntegrityError(f"duplicate chunk index {chunk_index}")
            if chunk_index >= chunk_count:
                raise IntegrityError(
                    f"chunk index {chunk_index} outside 0..{chunk_count - 1}"
                )
            seen.add(chunk_index)
            chunks.append(ChunkRecord(chunk_index, token_count, cur.take(payload_len)))
        clusters.append(ClusterRecord((ox, oy, oz), local_depth, tuple(chunks)))
    if cur.pos != len(data):
        raise IntegrityError(f"{len(data) - cur.pos} trailing bytes after last chunk")

    cf = CompressedFile(
        header=ContainerHeader(
            bit_depth=bit_depth,
            k_mode=k_mode,
            model_id=MODEL_IDS[model_byte],
            model_digest=model_digest,
            codebook=codebook,
            max_chunk_len=max_chunk_len,
        ),
        clusters=tuple(clusters),
    )
    _validate(cf)
    return cf
