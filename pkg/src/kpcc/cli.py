"""Command-line front end: encode, decode, bench, info, gen, corpus."""

from __future__ import annotations

import argparse
import sys

from .container import CODEBOOK_DEFAULT, read_container
from .errors import KpccError, ParameterError
from .ktree import K_MODES
from .pipeline import (
    bench,
    decode_file,
    encode_file,
    export_corpus,
    resolve_model_id,
)
from .pointcloud import save_ply
from .synthgen import SHAPES, gen
from .tokenmap import DEFAULT_BASE_ID, DEFAULT_MAX_CHUNK_LEN


def _model_params(model_id: str, args) -> dict | None:
    params = {}
    if model_id == "adaptive_ctx" and args.order is not None:
        params["order"] = args.order
    if model_id == "tiny_transformer":
        if not args.weights:
            raise ParameterError("--weights is required for the transformer model")
        params["weights"] = args.weights
    if model_id == "external_bridge":
        if args.bridge_cmd:
            params["cmd"] = args.bridge_cmd
        if args.tag:
            params["tag"] = args.tag
    return params or None


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--weights", help="KPTW weights file (transformer model)")
    p.add_argument(
        "--bridge-cmd",
        help="external model command (bridge model; default $KPCC_BRIDGE_CMD)",
    )
    p.add_argument("--tag", help="identity tag recorded for a bridge model")
    p.add_argument("--order", type=int, help="context order (adaptive model)")
    p.add_argument("--codebook", help="explicit codebook file")
    p.add_argument("--threads", type=int, default=1)


def _cmd_encode(args) -> int:
    model_id = resolve_model_id(args.model)
    report = encode_file(
        args.input,
        args.output,
        num_clusters=args.clusters,
        k_mode=args.k_mode,
        max_chunk_len=args.chunk,
        model_id=model_id,
        model_params=_model_params(model_id, args),
        seed=args.seed,
        threads=args.threads,
        base_id=args.base_id,
        codebook_path=args.codebook,
        verify=args.verify,
    )
    print(
        f"{args.output}: {report.points} points, {report.clusters} clusters, "
        f"{report.bytes} bytes, {report.bpp:.4f} bpp, {report.wall_time:.2f}s"
    )
    return 0


def _cmd_decode(args) -> int:
    # The file names its own model; flags only supply what a digest needs.
    with open(args.input, "rb") as fh:
        model_id = read_container(fh.read()).header.model_id
    report = decode_file(
        args.input,
        args.output,
        model_params=_model_params(model_id, args),
        threads=args.threads,
        codebook_path=args.codebook,
        fmt=args.fmt,
    )
    print(f"{args.output}: {report.points} points, {report.wall_time:.2f}s")
    return 0


def _cmd_bench(args) -> int:
    specs = []
    for name in args.models:
        model_id = resolve_model_id(name)
        specs.append(
            {"model": model_id, "params": _model_params(model_id, args), "label": name}
        )
    table = bench(
        args.inputs,
        specs,
        num_clusters=args.clusters,
        k_mode=args.k_mode,
        max_chunk_len=args.chunk,
        seed=args.seed,
        threads=args.threads,
    )
    sys.stdout.write(table.render_text())
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(table.render_csv())
        print(f"wrote {args.csv}")
    return 0


def _cmd_info(args) -> int:
    with open(args.input, "rb") as fh:
        cf = read_container(fh.read())
    h = cf.header
    print(f"bit_depth      {h.bit_depth}")
    print(f"k_mode         {h.k_mode}")
    print(f"model          {h.model_id}")
    print(f"model_digest   {h.model_digest.hex()}")
    if h.codebook.kind == CODEBOOK_DEFAULT:
        print(f"codebook       default (base_id {h.codebook.base_id})")
    else:
        print(f"codebook       file (digest {h.codebook.file_digest.hex()})")
    print(f"max_chunk_len  {h.max_chunk_len}")
    print(f"clusters       {len(cf.clusters)}")
    print(f"chunks         {cf.total_chunks}")
    print(f"payload_bytes  {cf.total_payload_bytes}")
    for i, cl in enumerate(cf.clusters):
        print(
            f"  cluster {i}: offset {cl.offset}, depth {cl.local_depth}, "
            f"{len(cl.chunks)} chunks, "
            f"{sum(len(c.payload) for c in cl.chunks)} payload bytes"
        )
    return 0


def _cmd_gen(args) -> int:
    params = {}
    for item in args.param:
        if "=" not in item:
            raise ParameterError(f"--param wants key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            params[key] = int(raw)
        except ValueError:
            params[key] = float(raw)
    pc = gen(args.shape, args.depth, seed=args.seed, **params)
    save_ply(pc, args.output, fmt=args.fmt)
    print(f"{args.output}: {pc.coords.shape[0]} points at depth {pc.bit_depth}")
    return 0


def _cmd_corpus(args) -> int:
    chunks = export_corpus(
        args.inputs,
        args.output,
        num_clusters=args.clusters,
        k_mode=args.k_mode,
        max_chunk_len=args.chunk,
        seed=args.seed,
        base_id=args.base_id,
    )
    print(f"{args.output}: {chunks} chunks from {len(args.inputs)} clouds")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kpcc", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="compress a PLY file")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--clusters", type=int, default=1)
    p.add_argument("--k-mode", choices=K_MODES, default="octree8")
    p.add_argument("--model", default="adaptive")
    p.add_argument("--chunk", type=int, default=DEFAULT_MAX_CHUNK_LEN)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base-id", type=int, default=DEFAULT_BASE_ID)
    p.add_argument("--verify", action="store_true",
                   help="decode in-process and compare before writing")
    _add_model_flags(p)
    p.set_defaults(fn=_cmd_encode)

    p = sub.add_parser("decode", help="decompress to a PLY file")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--fmt", choices=("binary", "ascii"), default="binary")
    _add_model_flags(p)
    p.set_defaults(fn=_cmd_decode)

    p = sub.add_parser("bench", help="compare models across inputs")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--models", nargs="+", required=True,
                   help="first model is the gain reference")
    p.add_argument("--csv", help="also write the table as CSV")
    p.add_argument("--clusters", type=int, default=1)
    p.add_argument("--k-mode", choices=K_MODES, default="octree8")
    p.add_argument("--chunk", type=int, default=DEFAULT_MAX_CHUNK_LEN)
    p.add_argument("--seed", type=int, default=0)
    _add_model_flags(p)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("info", help="dump a compressed file's header")
    p.add_argument("input")
    p.set_defaults(fn=_cmd_info)

    p = sub.add_parser("gen", help="generate a synthetic cloud")
    p.add_argument("--shape", choices=SHAPES, required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--param", action="append", default=[],
                   help="shape parameter as key=value (repeatable)")
    p.add_argument("--fmt", choices=("binary", "ascii"), default="binary")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("corpus", help="export token chunks for training")
    p.add_argument("-i", "--inputs", nargs="+", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--clusters", type=int, default=1)
    p.add_argument("--k-mode", choices=K_MODES, default="octree8")
    p.add_argument("--chunk", type=int, default=DEFAULT_MAX_CHUNK_LEN)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base-id", type=int, default=DEFAULT_BASE_ID)
    p.set_defaults(fn=_cmd_corpus)

    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except KpccError as exc:
        print(f"kpcc: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
