"""Acceptance gates: one test per externally visible guarantee.

Each test pins a promise of the pipeline at its stated tolerance, over
inputs varied enough to be convincing rather than illustrative:

 1. exact round-trips across a 100-cloud grid of shapes, depths, cluster
    counts, tree modes, and probability models, in under ten minutes;
 2. coded payload within [H*n, 1.01*H*n + 64] bits of the source entropy
    for a matched static model over a 255-symbol alphabet;
 3. tree serialization equal to the recursive reference on 1000 random
    clusters of side <= 16, plus exact inversion;
 4. the decodability cascade holds on 10^4 freshly built sequences, and
    10^4 corrupted sequences all raise IntegrityError, never decoding to
    wrong output;
 5. the adaptive context model reaches at most 0.9x the uniform-model
    bits on at least 90% of a structured corpus and never does worse;
 6. encoded bytes are byte-identical across worker thread counts;
 7. an external model subprocess round-trips 1000-token chunks, and a
    mid-encode crash surfaces as TransportError with no output file;
 8. the frozen reference-results table reproduces per row from its own
    bpp figures, and its average row is the mean of the per-row gains.

Seeds, corpus layouts, and expected constants are frozen. Never loosen a
bound here to make a regression pass; fix the regression.
"""

import collections
import math
import os
import sys
import time

import numpy as np
import pytest

from kpcc import synthgen
from kpcc.cluster import Cluster
from kpcc.container import read_container
from kpcc.errors import IntegrityError, TransportError
from kpcc.ktree import (
    OccupancySequence,
    build_sequence,
    default_schedule,
    reconstruct_points,
)
from kpcc.models import StaticSession
from kpcc.pipeline import decode_cloud, encode_cloud, encode_file, gain_percent
from kpcc.pointcloud import save_ply
from kpcc.rangecoder import decode_tokens, encode_tokens
from kpcc.synthgen import oracle_sequence

SEED = 20260814
MOCK = os.path.join(os.path.dirname(__file__), "bridge_mock.py")


# ---------------------------------------------------------------------------
# 1. Losslessness across the configuration grid


def _grid_params(shape: str, depth: int) -> dict:
    """Size knobs per (shape, depth) keeping the 100-cloud grid fast."""
    return {
        "sphere": {"samples": {4: 800, 6: 4000, 8: 10000, 10: 16000}[depth]},
        "plane": {},
        "boxes": {
            "count": {4: 4, 6: 5, 8: 6, 10: 6}[depth],
            "max_size": {4: 5, 6: 8, 8: 12, 10: 16}[depth],
        },
        "blobs": {"per_blob": {4: 150, 6: 600, 8: 1800, 10: 3000}[depth]},
        "noise": {"count": {4: 300, 6: 1500, 8: 5000, 10: 8000}[depth]},
    }[shape]


def test_01_lossless_roundtrip_over_100_cloud_grid():
    depths = (4, 6, 8, 10)
    shapes = ("sphere", "plane", "boxes", "blobs", "noise")
    cluster_counts = (1, 2, 12)
    k_modes = ("octree8", "mixed12")
    models = ("uniform", "adaptive_ctx")

    seen = collections.Counter()
    started = time.monotonic()
    for i in range(100):
        depth = depths[i % 4]
        shape = shapes[i % 5]
        if shape == "plane":
            # The plane generator has no size knob and covers the full x/y
            # grid, so cap its depth; depths 8 and 10 stay covered >= 10
            # times each by the other four shapes.
            depth = min(depth, 6)
        clusters = cluster_counts[i % 3]
        k_mode = k_modes[i % 2]
        model = models[(i // 2) % 2]
        pc = synthgen.gen(shape, depth, seed=i, **_grid_params(shape, depth))
        blob = encode_cloud(
            pc, num_clusters=clusters, k_mode=k_mode, model_id=model, seed=i
        )
        decoded = decode_cloud(blob)
        assert decoded == pc, (
            f"cloud {i} ({shape}, d={depth}, clusters={clusters}, "
            f"{k_mode}, {model}) did not round-trip exactly"
        )
        seen.update(
            [
                ("depth", depth),
                ("shape", shape),
                ("clusters", clusters),
                ("k_mode", k_mode),
                ("model", model),
            ]
        )
    elapsed = time.monotonic() - started

    for depth in depths:
        assert seen[("depth", depth)] >= 10
    for shape in shapes:
        assert seen[("shape", shape)] >= 10
    for clusters in cluster_counts:
        assert seen[("clusters", clusters)] >= 10
    for k_mode in k_modes:
        assert seen[("k_mode", k_mode)] >= 10
    for model in models:
        assert seen[("model", model)] >= 10
    assert elapsed < 600.0, f"grid took {elapsed:.0f}s, budget is 600s"


# ---------------------------------------------------------------------------
# 2. Payload within 1% of the Shannon limit for a matched model


def test_02_payload_within_one_percent_of_entropy():
    n = 100_000
    vocab = 255
    # A uniform source makes every draw cost the same number of coded
    # bits, so the payload cannot dip under H*n through sampling luck; the
    # measured margin is then pure quantization and coder overhead, which
    # is exactly what the 1% + 64-bit budget is meant to bound.
    probs = np.full(vocab, 1.0 / vocab)
    entropy = math.log2(vocab)
    rng = np.random.default_rng(SEED)
    draws = [int(t) for t in rng.choice(vocab, size=n, p=probs)]

    payload = encode_tokens(draws, StaticSession(probs))
    bits = 8 * len(payload.data)
    assert entropy * n <= bits <= 1.01 * entropy * n + 64
    assert decode_tokens(payload, StaticSession(probs)) == draws

    # A skewed source must stay inside the same upper budget; its lower
    # side is left to sampling (a lucky sample is legitimately shorter).
    raw = 0.98 ** np.arange(vocab)
    skewed = raw / raw.sum()
    h_skewed = float(-(skewed * np.log2(skewed)).sum())
    draws = [int(t) for t in rng.choice(vocab, size=n, p=skewed)]
    payload = encode_tokens(draws, StaticSession(skewed))
    assert 8 * len(payload.data) <= 1.01 * h_skewed * n + 64
    assert decode_tokens(payload, StaticSession(skewed)) == draws


# ---------------------------------------------------------------------------
# 3. Serialization equals the recursive reference; inversion is exact


def test_03_tree_serialization_matches_recursive_reference():
    rng = np.random.default_rng(SEED)
    cases = []
    for _ in range(996):
        depth = int(rng.integers(1, 5))  # cube side 2..16
        side = 1 << depth
        count = int(rng.integers(1, min(side**3, 300) + 1))
        cases.append(rng.integers(0, side, size=(count, 3)))
    cases.append(np.zeros((1, 3), dtype=np.int64))  # single voxel
    cases.append(np.array([[15, 15, 15]]))  # far corner of the 16-cube
    full = np.mgrid[0:2, 0:2, 0:2].reshape(3, -1).T
    cases.append(full)  # a completely full 2-cube
    cases.append(np.stack([np.zeros(16, int), np.zeros(16, int), np.arange(16)], axis=1))

    checked = 0
    for case_idx, pts in enumerate(cases):
        cluster = Cluster.from_global(np.unique(np.asarray(pts), axis=0))
        k_mode = ("octree8", "mixed12")[case_idx % 2]
        schedule = default_schedule(cluster.local_depth, k_mode)
        seq = build_sequence(cluster, schedule)
        assert seq.symbols.tolist() == oracle_sequence(cluster, schedule), (
            f"case {case_idx}: vectorized serialization diverged from the "
            f"recursive reference"
        )
        assert np.array_equal(reconstruct_points(seq), cluster.local_coords)
        checked += 1
    assert checked >= 1000


# ---------------------------------------------------------------------------
# 4. Cascade fuzz: valid sequences verify, corrupted ones always reject


def _level_starts(level_counts) -> list[int]:
    starts, pos = [], 0
    for count in level_counts:
        starts.append(pos)
        pos += count
    return starts


def _corrupt(seq: OccupancySequence, rng, kind: int) -> np.ndarray:
    """Return symbols that are invalid by construction.

    kind 0: change one non-last-level popcount (breaks the cascade),
    kind 1: zero out a symbol, kind 2: push a symbol past its alphabet,
    kind 3: truncate, kind 4: append trailing symbols.
    """
    syms = seq.symbols.copy()
    starts = _level_starts(seq.level_counts)
    k_values = seq.schedule.k_values
    if kind == 0 and len(seq.level_counts) == 1:
        kind = 1  # no non-last level exists; zeroing is always invalid
    if kind == 0:
        lev = int(rng.integers(0, len(seq.level_counts) - 1))
        pos = starts[lev] + int(rng.integers(0, seq.level_counts[lev]))
        k = k_values[lev]
        old_pc = int(syms[pos]).bit_count()
        syms[pos] = 1 if old_pc == k else (1 << k) - 1
    elif kind == 1:
        syms[int(rng.integers(0, len(syms)))] = 0
    elif kind == 2:
        pos = int(rng.integers(0, len(syms)))
        lev = max(i for i, s in enumerate(starts) if s <= pos)
        syms[pos] = 1 << k_values[lev]
    elif kind == 3:
        return syms[: -int(rng.integers(1, len(syms) + 1))]
    else:
        extra = np.ones(int(rng.integers(1, 5)), dtype=np.uint16)
        return np.concatenate([syms, extra])
    return syms


def test_04_cascade_fuzz_valid_pass_and_corruptions_reject():
    rng = np.random.default_rng(SEED)
    sequences = []
    for case in range(10_000):
        depth = int(rng.integers(1, 4))
        side = 1 << depth
        count = int(rng.integers(1, 65))
        pts = np.unique(rng.integers(0, side, size=(count, 3)), axis=0)
        cluster = Cluster.from_global(pts)
        k_mode = ("octree8", "mixed12")[case % 2]
        seq = build_sequence(
            cluster, default_schedule(cluster.local_depth, k_mode)
        )
        # Verify the decodability cascade with plain Python, independent
        # of the validation inside OccupancySequence itself.
        pos, expected = 0, 1
        for k in seq.schedule.k_values:
            block = seq.symbols[pos : pos + expected].tolist()
            assert len(block) == expected
            assert all(1 <= s < (1 << k) for s in block)
            pos += expected
            expected = sum(s.bit_count() for s in block)
        assert pos == len(seq.symbols)
        assert expected == cluster.num_points
        sequences.append(seq)

    rejected = 0
    for i, seq in enumerate(sequences):
        corrupted = _corrupt(seq, rng, i % 5)
        with pytest.raises(IntegrityError):
            OccupancySequence(corrupted, seq.schedule)
        rejected += 1
    assert rejected == 10_000


# ---------------------------------------------------------------------------
# 5. The adaptive context model earns its keep on structured data


def test_05_adaptive_model_beats_uniform_on_structured_corpus():
    corpus = []
    for i in range(8):
        corpus.append(synthgen.gen("plane", 8, seed=i))
        corpus.append(synthgen.gen("sphere", 8, seed=i, samples=20000))
        corpus.append(synthgen.gen("boxes", 8, seed=i, count=5))

    shared = dict(num_clusters=1, max_chunk_len=1 << 20, seed=0)
    ratios = []
    for pc in corpus:
        uniform = len(encode_cloud(pc, model_id="uniform", **shared))
        adaptive = len(encode_cloud(pc, model_id="adaptive_ctx", **shared))
        ratios.append(adaptive / uniform)

    wins = sum(r <= 0.9 for r in ratios)
    assert wins >= math.ceil(0.9 * len(corpus)), (
        f"adaptive reached 0.9x uniform on only {wins}/{len(corpus)} clouds: "
        f"{[round(r, 3) for r in ratios]}"
    )
    assert max(ratios) <= 1.0, f"adaptive lost outright: max ratio {max(ratios):.3f}"


# ---------------------------------------------------------------------------
# 6. Worker threads never change the bytes


def test_06_encoded_bytes_identical_across_thread_counts():
    shapes = ("sphere", "plane", "boxes", "blobs", "noise")
    sizes = {
        "sphere": {"samples": 6000},
        "plane": {},
        "boxes": {"count": 4, "max_size": 10},
        "blobs": {"per_blob": 800},
        "noise": {"count": 3000},
    }
    for i in range(20):
        shape = shapes[i % 5]
        depth = 6 if shape == "plane" else (6, 8)[i % 2]
        pc = synthgen.gen(shape, depth, seed=400 + i, **sizes[shape])
        config = dict(
            num_clusters=(1, 4, 12)[i % 3],
            k_mode=("octree8", "mixed12")[i % 2],
            model_id=("uniform", "adaptive_ctx")[(i // 2) % 2],
            max_chunk_len=(256, 1024)[i % 2],
            seed=i,
        )
        single = encode_cloud(pc, threads=1, **config)
        pooled = encode_cloud(pc, threads=8, **config)
        assert single == pooled, f"input {i}: thread count changed the bytes"


# ---------------------------------------------------------------------------
# 7. External model subprocess: round-trip and crash containment


def test_07_bridge_roundtrip_and_crash_containment(tmp_path):
    pc = synthgen.gen("sphere", 7, seed=9, samples=6000)
    cmd = f"{sys.executable} {MOCK}"
    params = {"cmd": cmd, "tag": "acceptance-mock"}

    blob = encode_cloud(
        pc,
        model_id="external_bridge",
        model_params=params,
        max_chunk_len=1000,
        num_clusters=2,
    )
    assert decode_cloud(blob, model_params=params) == pc

    # The cloud is big enough that full 1000-token chunks actually occur;
    # a stored count is the coded run (payload plus the eos marker).
    parsed = read_container(blob)
    counts = [
        chunk.token_count
        for cluster in parsed.clusters
        for chunk in cluster.chunks
    ]
    assert max(counts) == 1000 + 1 and len(counts) >= 4

    src = str(tmp_path / "in.ply")
    out = str(tmp_path / "out.kpc")
    save_ply(pc, src)
    with pytest.raises(TransportError):
        encode_file(
            src,
            out,
            model_id="external_bridge",
            model_params={"cmd": f"{cmd} --die-after 200"},
            max_chunk_len=1000,
            num_clusters=2,
        )
    assert not os.path.exists(out), "a crashed bridge must not leave output"


# ---------------------------------------------------------------------------
# 8. Reference-results arithmetic reproduces, average is the row mean


# Frozen reference figures: bits per point for two baselines and this
# method over six standard clouds, plus the gains each row prints. They
# pin the semantics of gain_percent and of bench's Average row.
REFERENCE_ROWS = (
    # name, baseline_a, baseline_b, ours, printed_gain_a, printed_gain_b
    ("longdress", 1.015, 0.643, 0.631, -37.882, -1.944),
    ("redandblack", 1.100, 0.714, 0.703, -36.100, -1.555),
    ("soldier", 1.013, 0.653, 0.634, -38.456, -2.925),
    ("loot", 0.970, 0.614, 0.597, -38.454, -2.769),
    ("basketball", 0.898, 0.497, 0.490, -45.479, -1.410),
    ("dancer", 0.880, 0.500, 0.485, -44.909, -3.079),
)
PRINTED_AVERAGE_GAIN_A = -40.213
PRINTED_AVERAGE_BPP = {"baseline_a": 0.982, "ours": 0.590}


def test_08_reference_table_gains_reproduce_per_row():
    for name, base_a, base_b, ours, printed_a, printed_b in REFERENCE_ROWS:
        computed_a = gain_percent(ours, base_a)
        computed_b = gain_percent(ours, base_b)
        assert abs(computed_b - printed_b) <= 0.1, (
            f"{name}: baseline_b gain {computed_b:.3f} vs printed {printed_b}"
        )
        if name == "soldier":
            # The one self-inconsistent row: its own bpp figures give
            # -37.414, a full 1.04 points away from the printed -38.456.
            # Assert the recomputed value so the discrepancy stays visible.
            assert computed_a == pytest.approx(-37.414, abs=5e-3)
            assert abs(computed_a - printed_a) > 1.0
        else:
            assert abs(computed_a - printed_a) <= 0.1, (
                f"{name}: baseline_a gain {computed_a:.3f} vs printed {printed_a}"
            )

    # The printed average gain is exactly the mean of the printed per-row
    # gains; neither recomputed-row averaging nor pooling bpp first
    # reproduces it. bench() therefore averages per-row gains.
    printed_rows = [row[4] for row in REFERENCE_ROWS]
    assert np.mean(printed_rows) == pytest.approx(PRINTED_AVERAGE_GAIN_A, abs=5e-4)

    recomputed_rows = [gain_percent(row[3], row[1]) for row in REFERENCE_ROWS]
    assert abs(np.mean(recomputed_rows) - PRINTED_AVERAGE_GAIN_A) > 0.1

    pooled = gain_percent(
        PRINTED_AVERAGE_BPP["ours"], PRINTED_AVERAGE_BPP["baseline_a"]
    )
    assert pooled == pytest.approx(-39.919, abs=5e-3)
    assert abs(pooled - PRINTED_AVERAGE_GAIN_A) > 0.2
