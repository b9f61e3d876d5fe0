"""Voxel point cloud container and PLY input/output.

Coordinates are non-negative integers on a grid of side 2**bit_depth per
axis, with bit_depth between 1 and 16. A cloud is duplicate-free and kept
in canonical order (lexicographic by x, then y, then z); every constructor
path enforces both, so two clouds with the same point set always compare
and serialize identically.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, FormatError, ParameterError

MAX_BIT_DEPTH = 16

# PLY scalar type name -> little-endian numpy dtype code.
_PLY_DTYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def round_half_up(values: np.ndarray) -> np.ndarray:
    """Round to the nearest integer, halves toward +infinity.

    This is the single rounding rule used everywhere in the package
    (PLY loading, voxelization, cluster centroids).
    """
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5).astype(np.int64)


def min_bit_depth(coords: np.ndarray) -> int:
    """Smallest bit depth whose grid contains every coordinate."""
    top = int(coords.max())
    return max(1, top.bit_length())


class PointCloud:
    """An immutable set of integer voxel coordinates plus its grid depth."""

    __slots__ = ("coords", "bit_depth")

    def __init__(self, coords: np.ndarray, bit_depth: int):
        """Build a canonical cloud from integer coordinates.

        Args:
            coords: (N, 3) array-like of integers; duplicates are dropped.
            bit_depth: grid depth d, all coordinates must fit in [0, 2**d).

        Raises:
            ParameterError: bad shape, empty input, or bit_depth out of range.
            DomainError: coordinates negative or outside the grid.
        """
        arr = np.asarray(coords)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ParameterError(f"coords must be (N, 3), got {arr.shape}")
        if arr.shape[0] == 0:
            raise ParameterError("point cloud must contain at least one point")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ParameterError(f"coords must be integers, got dtype {arr.dtype}")
        if not isinstance(bit_depth, (int, np.integer)) or not 1 <= bit_depth <= MAX_BIT_DEPTH:
            raise ParameterError(f"bit_depth must be in [1, {MAX_BIT_DEPTH}], got {bit_depth}")
        arr = arr.astype(np.int64)
        if arr.min() < 0:
            raise DomainError("coordinates must be non-negative")
        if arr.max() >= (1 << bit_depth):
            raise DomainError(
                f"coordinate {int(arr.max())} does not fit bit_depth {bit_depth}"
            )
        # np.unique on rows both deduplicates and sorts lexicographically,
        # which is exactly the canonical order.
        arr = np.unique(arr, axis=0)
        arr.setflags(write=False)
        self.coords = arr
        self.bit_depth = int(bit_depth)

    @property
    def num_points(self) -> int:
        return int(self.coords.shape[0])

    def __len__(self) -> int:
        return self.num_points

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.bit_depth == other.bit_depth and np.array_equal(
            self.coords, other.coords
        )

    def __repr__(self) -> str:
        return f"PointCloud(num_points={self.num_points}, bit_depth={self.bit_depth})"


def voxelize(raw_points: np.ndarray, bit_depth: int) -> PointCloud:
    """Quantize raw float positions onto the integer grid.

    Positions are shifted so the minimum corner sits at the origin, scaled
    uniformly (one factor for all axes) so the largest extent spans
    [0, 2**bit_depth - 1], then rounded half toward +infinity and
    deduplicated.

    Args:
        raw_points: (N, 3) array of finite floats.
        bit_depth: target grid depth in [1, 16].

    Returns:
        The quantized PointCloud.

    Raises:
        ParameterError: empty input or bad bit_depth.
        DomainError: NaN or infinite coordinates.
    """
    pts = np.asarray(raw_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ParameterError(f"raw_points must be (N, 3), got {pts.shape}")
    if pts.shape[0] == 0:
        raise ParameterError("cannot voxelize an empty point set")
    if not np.all(np.isfinite(pts)):
        raise DomainError("raw points must be finite")
    if not 1 <= bit_depth <= MAX_BIT_DEPTH:
        raise ParameterError(f"bit_depth must be in [1, {MAX_BIT_DEPTH}], got {bit_depth}")
    lo = pts.min(axis=0)
    extent = float((pts - lo).max())
    if extent == 0.0:
        coords = np.zeros((1, 3), dtype=np.int64)
    else:
        scale = ((1 << bit_depth) - 1) / extent
        coords = round_half_up((pts - lo) * scale)
    return PointCloud(coords, bit_depth)


def _parse_header(data: bytes, path: str):
    """Split a PLY header into (format, comments, elements, body_offset).

    elements is a list of (name, count, [(prop_name, dtype_code), ...]);
    list-typed properties are rejected on the vertex element and recorded
    as None markers elsewhere.
    """
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    try:
        header = data[:end].decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: header is not ASCII") from exc
    fmt = None
    comments = []
    elements = []
    for line in header.splitlines()[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if len(parts) != 3 or parts[2] != "1.0":
                raise FormatError(f"{path}: unsupported format line {line!r}")
            fmt = parts[1]
        elif parts[0] == "comment":
            comments.append(parts[1:])
        elif parts[0] == "element":
            if len(parts) != 3:
                raise FormatError(f"{path}: bad element line {line!r}")
            try:
                count = int(parts[2])
            except ValueError as exc:
                raise FormatError(f"{path}: bad element count in {line!r}") from exc
            elements.append((parts[1], count, []))
        elif parts[0] == "property":
            if not elements:
                raise FormatError(f"{path}: property before any element")
            if parts[1] == "list":
                elements[-1][2].append((parts[-1], None))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_DTYPES:
                    raise FormatError(f"{path}: unsupported property line {line!r}")
                elements[-1][2].append((parts[2], _PLY_DTYPES[parts[1]]))
    if fmt is None:
        raise FormatError(f"{path}: missing format line")
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"{path}: unsupported PLY format {fmt!r}")
    return fmt, comments, elements, end + len(b"end_header\n")


def load_ply(path: str) -> PointCloud:
    """Read a PLY file (ascii or binary_little_endian) as a PointCloud.

    Float coordinates are rounded half toward +infinity. If the header
    carries a "comment bit_depth <d>" line (written by save_ply) that depth
    is used; otherwise the smallest depth covering the largest coordinate.

    Raises:
        FormatError: malformed header, missing vertex element, unsupported
            layout, or truncated body.
        DomainError: negative, NaN, or too-large coordinates.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    fmt, comments, elements, body_off = _parse_header(data, path)

    declared_depth = None
    for parts in comments:
        if len(parts) == 2 and parts[0] == "bit_depth":
            try:
                declared_depth = int(parts[1])
            except ValueError as exc:
                raise FormatError(f"{path}: bad bit_depth comment") from exc

    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise FormatError(f"{path}: no vertex element")
    if elements.index(vertex) != 0 and any(
        count > 0 for name, count, _ in elements[: elements.index(vertex)]
    ):
        raise FormatError(f"{path}: vertex element must come first")
    _, count, props = vertex
    if count == 0:
        raise FormatError(f"{path}: vertex element is empty")
    names = [p[0] for p in props]
    if any(dt is None for _, dt in props):
        raise FormatError(f"{path}: list property on vertex element")
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise FormatError(f"{path}: vertex element lacks property {axis!r}")

    if fmt == "ascii":
        tokens = data[body_off:].split()
        need = count * len(props)
        if len(tokens) < need:
            raise FormatError(f"{path}: truncated vertex data")
        try:
            table = np.array(tokens[:need], dtype=np.float64).reshape(count, len(props))
        except ValueError as exc:
            raise FormatError(f"{path}: non-numeric vertex data") from exc
        cols = {name: table[:, i] for i, name in enumerate(names)}
    else:
        dtype = np.dtype([(name, "<" + dt) for name, dt in props])
        if len(data) - body_off < count * dtype.itemsize:
            raise FormatError(f"{path}: truncated vertex data")
        rows = np.frombuffer(data, dtype=dtype, count=count, offset=body_off)
        cols = {name: rows[name].astype(np.float64) for name in names}

    xyz = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    if not np.all(np.isfinite(xyz)):
        raise DomainError(f"{path}: non-finite coordinate")
    coords = round_half_up(xyz)
    if coords.min() < 0:
        raise DomainError(f"{path}: negative coordinate after rounding")
    if coords.max() >= (1 << MAX_BIT_DEPTH):
        raise DomainError(f"{path}: coordinate exceeds the {MAX_BIT_DEPTH}-bit grid")

    depth = min_bit_depth(coords)
    if declared_depth is not None:
        if not 1 <= declared_depth <= MAX_BIT_DEPTH or declared_depth < depth:
            raise FormatError(
                f"{path}: declared bit_depth {declared_depth} does not cover the data"
            )
        depth = declared_depth
    return PointCloud(coords, depth)


def save_ply(pc: PointCloud, path: str, fmt: str = "binary") -> None:
    """Write a PointCloud as PLY in canonical point order.

    The declared bit depth is preserved through a header comment, so
    load_ply(save_ply(pc)) reproduces pc exactly. Coordinates are written
    as float32, which is exact for the 16-bit grid.

    Args:
        pc: cloud to write.
        path: output file path.
        fmt: "binary" (little-endian) or "ascii".
    """
    if fmt not in ("binary", "ascii"):
        raise ParameterError(f"fmt must be 'binary' or 'ascii', got {fmt!r}")
    fmt_line = "ascii" if fmt == "ascii" else "binary_little_endian"
    header = (
        "ply\n"
        f"format {fmt_line} 1.0\n"
        f"comment bit_depth {pc.bit_depth}\n"
        f"element vertex {pc.num_points}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if fmt == "ascii":
            lines = "\n".join(
                f"{x} {y} {z}" for x, y, z in pc.coords.tolist()
            )
            fh.write(lines.encode("ascii") + b"\n")
        else:
            fh.write(pc.coords.astype("<f4").tobytes())
