"""End-to-end encode/decode orchestration and benchmarking.

Work is partitioned by (cluster, chunk): every chunk is coded by a fresh
session state (reset, push bos, code payload+eos), so no job depends on
any other and results merge by index. That is what makes the output file
a pure function of (input, config) regardless of thread count, and it is
asserted by tests rather than assumed.

A full container is built in memory and written in one call; an encode
that fails at any stage (including a dead external model process) leaves
no partial output file behind.
"""

from __future__ import annotations

import hashlib
import io
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .cluster import Cluster, ClusterSet, cluster_points, merge_clusters
from .container import (
    CODEBOOK_DEFAULT,
    CODEBOOK_FILE,
    ChunkRecord,
    ClusterRecord,
    CodebookRef,
    CompressedFile,
    ContainerHeader,
    params_digest,
    read_container,
    write_container,
)
from .errors import IntegrityError, KpccError, ParameterError
from .ktree import OccupancySequence, build_sequence, default_schedule, reconstruct_points
from .models import ADAPTIVE_ORDER, session_start
from .pointcloud import PointCloud, load_ply, save_ply
from .rangecoder import CodedPayload, decode_tokens, encode_tokens
from .tokenmap import (
    DEFAULT_BASE_ID,
    DEFAULT_MAX_CHUNK_LEN,
    TokenChunk,
    default_codebook,
    detokenize_chunks,
    load_codebook,
    tokenize_chunks,
)

MODEL_ALIASES = {
    "adaptive": "adaptive_ctx",
    "transformer": "tiny_transformer",
    "bridge": "external_bridge",
}


def resolve_model_id(name: str) -> str:
    return MODEL_ALIASES.get(name, name)


def k_bits_for(k_mode: str) -> int:
    return default_schedule(1, k_mode).k_values[0]


def gain_percent(bpp: float, ref_bpp: float) -> float:
    """Size change of bpp relative to ref_bpp, in percent (negative = smaller)."""
    return (bpp - ref_bpp) / ref_bpp * 100.0


@dataclass(frozen=True)
class EncodeReport:
    bpp: float
    bytes: int
    points: int
    clusters: int
    wall_time: float


@dataclass(frozen=True)
class DecodeReport:
    points: int
    wall_time: float


@contextmanager
def _stage(name: str):
    """Tag any codec error with the pipeline stage it escaped from."""
    try:
        yield
    except KpccError as exc:
        raise type(exc)(f"{name}: {exc}") from exc


def _digest_params(model_id: str, model_params: dict | None, vocab_size: int) -> dict:
    """The portable, identity-defining slice of the model configuration."""
    params = dict(model_params or {})
    if model_id == "uniform":
        return {"vocab_size": vocab_size}
    if model_id == "adaptive_ctx":
        return {
            "vocab_size": vocab_size,
            "order": int(params.get("order", ADAPTIVE_ORDER)),
        }
    if model_id == "tiny_transformer":
        if "weights" not in params:
            raise ParameterError("tiny_transformer requires model_params['weights']")
        with open(params["weights"], "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        return {"vocab_size": vocab_size, "weights_sha256": digest}
    if model_id == "external_bridge":
        return {"vocab_size": vocab_size, "tag": str(params.get("tag", ""))}
    raise ParameterError(f"unknown model id {model_id!r}")


def _session_params(model_id: str, model_params: dict | None, vocab_size: int) -> dict:
    params = dict(model_params or {})
    if model_id == "uniform":
        return {"vocab_size": vocab_size}
    if model_id == "adaptive_ctx":
        out = {"vocab_size": vocab_size}
        if "order" in params:
            out["order"] = int(params["order"])
        return out
    if model_id == "tiny_transformer":
        return {"weights": params["weights"], "expect_vocab": vocab_size}
    if model_id == "external_bridge":
        out = {"vocab_size": vocab_size}
        for key in ("cmd", "timeout"):
            if key in params:
                out[key] = params[key]
        return out
    raise ParameterError(f"unknown model id {model_id!r}")


class _SessionPool:
    """One model session per worker thread, reused across chunk jobs."""

    def __init__(self, model_id: str, session_params: dict):
        self._model_id = model_id
        self._params = session_params
        self._local = threading.local()
        self._all: list = []
        self._lock = threading.Lock()

    def get(self):
        session = getattr(self._local, "session", None)
        if session is None:
            session = session_start(self._model_id, self._params)
            self._local.session = session
            with self._lock:
                self._all.append(session)
        return session

    def close(self):
        with self._lock:
            sessions, self._all = self._all, []
        for session in sessions:
            session.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _run_jobs(jobs, worker, threads: int) -> list:
    """Apply worker to jobs, preserving job order in the results."""
    if threads <= 1 or len(jobs) <= 1:
        return [worker(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, jobs))


def _load_encode_codebook(k_mode: str, base_id: int, codebook_path: str | None):
    k_bits = k_bits_for(k_mode)
    if codebook_path is None:
        return default_codebook(k_bits, base_id), CodebookRef.default(base_id)
    with open(codebook_path, "rb") as fh:
        content = fh.read()
    return load_codebook(codebook_path, k_bits), CodebookRef.file(content)


def _load_decode_codebook(header: ContainerHeader, codebook_path: str | None):
    k_bits = k_bits_for(header.k_mode)
    ref = header.codebook
    if ref.kind == CODEBOOK_DEFAULT:
        return default_codebook(k_bits, ref.base_id)
    if codebook_path is None:
        raise ParameterError(
            "this file was written with an explicit codebook file; "
            "pass its path to decode"
        )
    with open(codebook_path, "rb") as fh:
        content = fh.read()
    if CodebookRef.file(content).file_digest != ref.file_digest:
        raise IntegrityError(
            "supplied codebook file does not match the digest in the container"
        )
    return load_codebook(codebook_path, k_bits)


def encode_cloud(
    pc: PointCloud,
    *,
    num_clusters: int = 1,
    k_mode: str = "octree8",
    max_chunk_len: int = DEFAULT_MAX_CHUNK_LEN,
    model_id: str = "uniform",
    model_params: dict | None = None,
    seed: int = 0,
    threads: int = 1,
    base_id: int = DEFAULT_BASE_ID,
    codebook_path: str | None = None,
) -> bytes:
    """Compress a point cloud to container bytes."""
    model_id = resolve_model_id(model_id)
    with _stage("cluster"):
        cs = cluster_points(pc, num_clusters, seed=seed)
    with _stage("serialize"):
        cb, cb_ref = _load_encode_codebook(k_mode, base_id, codebook_path)
        per_cluster_chunks = []
        for cl in cs.clusters:
            seq = build_sequence(cl, default_schedule(cl.local_depth, k_mode))
            per_cluster_chunks.append(tokenize_chunks(seq, cb, max_chunk_len))

    with _stage("model"):
        digest = params_digest(
            model_id, _digest_params(model_id, model_params, cb.vocab_size)
        )
        pool = _SessionPool(
            model_id, _session_params(model_id, model_params, cb.vocab_size)
        )

    def code_chunk(chunk: TokenChunk) -> ChunkRecord:
        session = pool.get()
        session.reset()
        session.push_token(chunk.tokens[0])
        payload = encode_tokens(chunk.tokens[1:], session)
        return ChunkRecord(chunk.chunk_index, payload.token_count, payload.data)

    with _stage("encode"), pool:
        jobs = [chunk for chunks in per_cluster_chunks for chunk in chunks]
        records = _run_jobs(jobs, code_chunk, threads)

    with _stage("write"):
        clusters = []
        cursor = 0
        for cl, chunks in zip(cs.clusters, per_cluster_chunks):
            take = records[cursor : cursor + len(chunks)]
            cursor += len(chunks)
            clusters.append(ClusterRecord(cl.offset, cl.local_depth, tuple(take)))
        header = ContainerHeader(
            bit_depth=pc.bit_depth,
            k_mode=k_mode,
            model_id=model_id,
            model_digest=digest,
            codebook=cb_ref,
            max_chunk_len=max_chunk_len,
        )
        return write_container(CompressedFile(header, tuple(clusters)))


def decode_cloud(
    data: bytes,
    *,
    model_params: dict | None = None,
    threads: int = 1,
    codebook_path: str | None = None,
) -> PointCloud:
    """Decompress container bytes back to the exact point set.

    Raises:
        IntegrityError: the stream is damaged, or the configured model or
            codebook does not match the digests in the file.
    """
    with _stage("read"):
        cf = read_container(data)
    header = cf.header
    with _stage("codebook"):
        cb = _load_decode_codebook(header, codebook_path)
    with _stage("model"):
        digest = params_digest(
            header.model_id,
            _digest_params(header.model_id, model_params, cb.vocab_size),
        )
        if digest != header.model_digest:
            raise IntegrityError(
                "configured model does not match the digest this file was "
                "written with; decoding would produce garbage"
            )
        pool = _SessionPool(
            header.model_id,
            _session_params(header.model_id, model_params, cb.vocab_size),
        )

    def decode_chunk(record: ChunkRecord) -> TokenChunk:
        session = pool.get()
        session.reset()
        session.push_token(cb.bos_id)
        tokens = decode_tokens(
            CodedPayload(record.payload, record.token_count), session
        )
        return TokenChunk(record.chunk_index, (cb.bos_id, *tokens))

    with _stage("decode"), pool:
        jobs = [rec for cl in cf.clusters for rec in cl.chunks]
        chunks = _run_jobs(jobs, decode_chunk, threads)

    with _stage("reconstruct"):
        clusters = []
        cursor = 0
        for cl in cf.clusters:
            take = sorted(
                chunks[cursor : cursor + len(cl.chunks)], key=lambda c: c.chunk_index
            )
            cursor += len(cl.chunks)
            symbols = detokenize_chunks(take, cb)
            seq = OccupancySequence(
                symbols, default_schedule(cl.local_depth, header.k_mode)
            )
            local = reconstruct_points(seq)
            clusters.append(
                Cluster(offset=cl.offset, local_coords=local, local_depth=cl.local_depth)
            )
        return merge_clusters(
            ClusterSet(clusters=tuple(clusters), source_depth=header.bit_depth)
        )


def encode_file(input_path: str, output_path: str, *, verify: bool = False, **cfg) -> EncodeReport:
    """Compress a PLY file; see encode_cloud for cfg keys."""
    start = time.perf_counter()
    with _stage("load"):
        pc = load_ply(input_path)
    blob = encode_cloud(pc, **cfg)
    if verify:
        with _stage("verify"):
            back = decode_cloud(
                blob,
                model_params=cfg.get("model_params"),
                threads=cfg.get("threads", 1),
                codebook_path=cfg.get("codebook_path"),
            )
            if back != pc:
                raise IntegrityError("verification decode does not match the input")
    with _stage("write"):
        with open(output_path, "wb") as fh:
            fh.write(blob)
    n_clusters = len(read_container(blob).clusters)
    points = pc.coords.shape[0]
    return EncodeReport(
        bpp=8.0 * len(blob) / points,
        bytes=len(blob),
        points=points,
        clusters=n_clusters,
        wall_time=time.perf_counter() - start,
    )


def decode_file(input_path: str, output_path: str, *, fmt: str = "binary", **cfg) -> DecodeReport:
    """Decompress a container file to PLY; see decode_cloud for cfg keys."""
    start = time.perf_counter()
    with _stage("read"):
        with open(input_path, "rb") as fh:
            data = fh.read()
    pc = decode_cloud(data, **cfg)
    with _stage("write"):
        save_ply(pc, output_path, fmt=fmt)
    return DecodeReport(
        points=pc.coords.shape[0], wall_time=time.perf_counter() - start
    )


def export_corpus(
    input_paths: list[str],
    output_path: str,
    *,
    num_clusters: int = 1,
    k_mode: str = "octree8",
    max_chunk_len: int = DEFAULT_MAX_CHUNK_LEN,
    seed: int = 0,
    base_id: int = DEFAULT_BASE_ID,
) -> int:
    """Write the token chunks of the given clouds as a training corpus.

    Layout: header {vocab u32, K u8, max_chunk_len u32} little-endian,
    then every chunk's tokens as u32 values, bos/eos included. Chunks are
    self-delimiting (bos opens, eos closes), so no per-chunk length is
    stored. Returns the number of chunks written.
    """
    cb = default_codebook(k_bits_for(k_mode), base_id)
    chunk_count = 0
    body = bytearray()
    for path in input_paths:
        with _stage("load"):
            pc = load_ply(path)
        with _stage("cluster"):
            cs = cluster_points(pc, num_clusters, seed=seed)
        with _stage("serialize"):
            for cl in cs.clusters:
                seq = build_sequence(cl, default_schedule(cl.local_depth, k_mode))
                for chunk in tokenize_chunks(seq, cb, max_chunk_len):
                    body += np.asarray(chunk.tokens, dtype="<u4").tobytes()
                    chunk_count += 1
    header = np.asarray([cb.vocab_size], "<u4").tobytes()
    header += bytes([k_bits_for(k_mode)])
    header += np.asarray([max_chunk_len], "<u4").tobytes()
    with open(output_path, "wb") as fh:
        fh.write(header + bytes(body))
    return chunk_count


@dataclass(frozen=True)
class BenchTable:
    """bpp per (input row, model column) and gains vs the first column.

    The summary row averages the per-row gain percentages (not the ratio
    of average bpps), so each input weighs equally.
    """

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    bpp: tuple[tuple[float, ...], ...]

    def gain_rows(self) -> list[list[float]]:
        return [
            [gain_percent(cell, row[0]) for cell in row[1:]] for row in self.bpp
        ]

    def average_gains(self) -> list[float]:
        rows = self.gain_rows()
        if not rows or not rows[0]:
            return []
        return [float(np.mean([row[j] for row in rows])) for j in range(len(rows[0]))]

    def render_csv(self) -> str:
        out = io.StringIO()
        ref = self.col_labels[0]
        head = ["input"] + [f"bpp_{c}" for c in self.col_labels]
        head += [f"gain_{c}_vs_{ref}_pct" for c in self.col_labels[1:]]
        out.write(",".join(head) + "\n")
        for label, row, gains in zip(self.row_labels, self.bpp, self.gain_rows()):
            cells = [label] + [f"{v:.6f}" for v in row] + [f"{g:.3f}" for g in gains]
            out.write(",".join(cells) + "\n")
        if len(self.col_labels) > 1 and self.row_labels:
            means = [
                float(np.mean([row[j] for row in self.bpp]))
                for j in range(len(self.col_labels))
            ]
            cells = ["Average"] + [f"{v:.6f}" for v in means]
            cells += [f"{g:.3f}" for g in self.average_gains()]
            out.write(",".join(cells) + "\n")
        return out.getvalue()

    def render_text(self) -> str:
        ref = self.col_labels[0]
        header = ["input"] + [f"{c} bpp" for c in self.col_labels]
        header += [f"{c} gain%" for c in self.col_labels[1:]]
        rows = [header]
        for label, row, gains in zip(self.row_labels, self.bpp, self.gain_rows()):
            rows.append(
                [label]
                + [f"{v:.4f}" for v in row]
                + [f"{g:+.3f}" for g in gains]
            )
        if len(self.col_labels) > 1 and self.row_labels:
            means = [
                float(np.mean([row[j] for row in self.bpp]))
                for j in range(len(self.col_labels))
            ]
            rows.append(
                ["Average"]
                + [f"{v:.4f}" for v in means]
                + [f"{g:+.3f}" for g in self.average_gains()]
            )
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def bench(inputs: list[str], model_specs: list, **shared_cfg) -> BenchTable:
    """Encode every input under every model spec and tabulate bpp.

    A model spec is a model name (alias allowed) or a dict with keys
    model, params (optional), label (optional). The first spec is the
    reference column for gains.
    """
    if not inputs:
        raise ParameterError("bench needs at least one input")
    if not model_specs:
        raise ParameterError("bench needs at least one model")
    specs = []
    for spec in model_specs:
        if isinstance(spec, str):
            spec = {"model": spec}
        specs.append(
            (
                spec.get("label", spec["model"]),
                resolve_model_id(spec["model"]),
                spec.get("params"),
            )
        )
    grid = []
    with tempfile.TemporaryDirectory() as tmp:
        for row_idx, input_path in enumerate(inputs):
            row = []
            for col_idx, (label, model_id, params) in enumerate(specs):
                out = os.path.join(tmp, f"bench_{row_idx}_{col_idx}.kpc")
                report = encode_file(
                    input_path,
                    out,
                    model_id=model_id,
                    model_params=params,
                    **shared_cfg,
                )
                row.append(report.bpp)
            grid.append(tuple(row))
    return BenchTable(
        row_labels=tuple(os.path.basename(p) for p in inputs),
        col_labels=tuple(label for label, _, _ in specs),
        bpp=tuple(grid),
    )
