import numpy as np
import pytest

from kpcc.errors import DomainError, FormatError, ParameterError
from kpcc.pointcloud import (
    PointCloud,
    load_ply,
    min_bit_depth,
    round_half_up,
    save_ply,
    voxelize,
)

from conftest import random_cloud


def test_round_half_up_rule():
    vals = np.array([-0.5, -0.4, -0.1, 0.0, 0.4, 0.5, 1.5, 2.5, 2.49])
    out = round_half_up(vals)
    assert out.tolist() == [0, 0, 0, 0, 0, 1, 2, 3, 2]


def test_constructor_dedups_and_sorts():
    coords = np.array([[3, 1, 2], [0, 0, 1], [3, 1, 2], [0, 0, 0]])
    pc = PointCloud(coords, 2)
    assert pc.coords.tolist() == [[0, 0, 0], [0, 0, 1], [3, 1, 2]]
    assert pc.num_points == 3


def test_constructor_rejects_bad_input():
    with pytest.raises(ParameterError):
        PointCloud(np.zeros((0, 3), dtype=np.int64), 4)
    with pytest.raises(ParameterError):
        PointCloud(np.zeros((4, 2), dtype=np.int64), 4)
    with pytest.raises(ParameterError):
        PointCloud(np.zeros((4, 3)), 4)  # float dtype
    with pytest.raises(ParameterError):
        PointCloud(np.zeros((4, 3), dtype=np.int64), 0)
    with pytest.raises(ParameterError):
        PointCloud(np.zeros((4, 3), dtype=np.int64), 17)
    with pytest.raises(DomainError):
        PointCloud(np.array([[-1, 0, 0]]), 4)
    with pytest.raises(DomainError):
        PointCloud(np.array([[16, 0, 0]]), 4)


def test_equality_is_set_equality():
    a = PointCloud(np.array([[1, 2, 3], [0, 0, 0]]), 4)
    b = PointCloud(np.array([[0, 0, 0], [1, 2, 3], [1, 2, 3]]), 4)
    c = PointCloud(np.array([[0, 0, 0], [1, 2, 3]]), 5)
    assert a == b
    assert a != c  # same points, different declared depth


def test_dedup_matches_set_oracle(rng):
    # Oracle: plain Python set of tuples, no numpy involved.
    raw = rng.integers(0, 64, size=(1000, 3), dtype=np.int64)
    oracle = sorted(set(map(tuple, raw.tolist())))
    pc = PointCloud(raw, 6)
    assert list(map(tuple, pc.coords.tolist())) == oracle


@pytest.mark.parametrize("fmt", ["binary", "ascii"])
def test_ply_roundtrip(tmp_path, rng, fmt):
    pc = random_cloud(rng, 10, 500)
    path = str(tmp_path / "cloud.ply")
    save_ply(pc, path, fmt=fmt)
    back = load_ply(path)
    assert back == pc
    assert back.bit_depth == pc.bit_depth


def test_ply_roundtrip_preserves_padded_depth(tmp_path):
    # Depth 10 declared, but the single point would only need depth 1.
    pc = PointCloud(np.array([[1, 0, 0]]), 10)
    path = str(tmp_path / "pad.ply")
    save_ply(pc, path)
    assert load_ply(path).bit_depth == 10


def test_load_rounds_half_toward_positive_infinity(tmp_path):
    path = tmp_path / "frac.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 3\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
        "0.5 1.5 2.49\n-0.4 0.0 3.5\n7.5 0.5 0.5\n"
    )
    pc = load_ply(str(path))
    assert set(map(tuple, pc.coords.tolist())) == {(1, 2, 2), (0, 0, 4), (8, 1, 1)}


def test_load_minimal_depth_without_comment(tmp_path):
    path = tmp_path / "min.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 2\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
        "0 0 0\n100 3 7\n"
    )
    assert load_ply(str(path)).bit_depth == 7
    assert min_bit_depth(np.array([[100, 3, 7]])) == 7
    assert min_bit_depth(np.array([[0, 0, 0]])) == 1


def test_load_rejects_lying_depth_comment(tmp_path):
    path = tmp_path / "lie.ply"
    path.write_text(
        "ply\nformat ascii 1.0\ncomment bit_depth 3\nelement vertex 1\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
        "200 0 0\n"
    )
    with pytest.raises(FormatError):
        load_ply(str(path))


def test_load_with_extra_properties_binary(tmp_path):
    # x/y/z mixed with color channels, out of order, binary little endian.
    header = (
        "ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
        "property uchar red\nproperty float x\nproperty float y\n"
        "property ushort green\nproperty float z\nend_header\n"
    )
    row = np.dtype([("red", "u1"), ("x", "<f4"), ("y", "<f4"), ("green", "<u2"), ("z", "<f4")])
    body = np.array([(7, 1.0, 2.0, 300, 3.0), (9, 4.0, 5.0, 1, 6.0)], dtype=row)
    path = tmp_path / "color.ply"
    path.write_bytes(header.encode() + body.tobytes())
    pc = load_ply(str(path))
    assert set(map(tuple, pc.coords.tolist())) == {(1, 2, 3), (4, 5, 6)}


def test_load_ignores_trailing_face_element(tmp_path):
    path = tmp_path / "faces.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 2\n"
        "property float x\nproperty float y\nproperty float z\n"
        "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
        "0 0 0\n1 1 1\n"
        "3 0 1 0\n"
    )
    assert load_ply(str(path)).num_points == 2


def test_load_errors(tmp_path):
    cases = {
        "not a ply": "garbage\n",
        "no vertex": (
            "ply\nformat ascii 1.0\nelement face 1\n"
            "property list uchar int vertex_indices\nend_header\n3 0 1 0\n"
        ),
        "empty vertex": (
            "ply\nformat ascii 1.0\nelement vertex 0\n"
            "property float x\nproperty float y\nproperty float z\nend_header\n"
        ),
        "missing z": (
            "ply\nformat ascii 1.0\nelement vertex 1\n"
            "property float x\nproperty float y\nend_header\n0 0\n"
        ),
        "big endian": (
            "ply\nformat binary_big_endian 1.0\nelement vertex 1\n"
            "property float x\nproperty float y\nproperty float z\nend_header\n"
        ),
        "truncated ascii": (
            "ply\nformat ascii 1.0\nelement vertex 2\n"
            "property float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n"
        ),
    }
    for name, text in cases.items():
        path = tmp_path / "bad.ply"
        path.write_text(text)
        with pytest.raises(FormatError):
            load_ply(str(path))


def test_load_truncated_binary_body(tmp_path):
    header = (
        "ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    path = tmp_path / "short.ply"
    path.write_bytes(header.encode() + np.zeros(3, dtype="<f4").tobytes())
    with pytest.raises(FormatError):
        load_ply(str(path))


def test_load_domain_errors(tmp_path):
    for body in ("-2 0 0\n", "nan 0 0\n", "70000 0 0\n"):
        path = tmp_path / "dom.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 1\n"
            "property float x\nproperty float y\nproperty float z\nend_header\n" + body
        )
        with pytest.raises(DomainError):
            load_ply(str(path))


def test_voxelize_against_hand_computed_grid():
    raw = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [5.0, 2.5, 0.0]])
    # extent 10, depth 2 -> scale 3/10; third point -> (1.5, 0.75, 0) -> (2, 1, 0)
    pc = voxelize(raw, 2)
    assert set(map(tuple, pc.coords.tolist())) == {(0, 0, 0), (3, 0, 0), (2, 1, 0)}


def test_voxelize_full_extent_and_min_corner(rng):
    raw = rng.uniform(-50.0, 90.0, size=(400, 3))
    pc = voxelize(raw, 8)
    assert pc.coords.min() >= 0
    assert pc.coords.max() == 255  # the farthest point lands exactly on the top cell


def test_voxelize_degenerate_and_errors():
    pc = voxelize(np.array([[3.5, 3.5, 3.5], [3.5, 3.5, 3.5]]), 8)
    assert pc.coords.tolist() == [[0, 0, 0]]
    with pytest.raises(DomainError):
        voxelize(np.array([[np.nan, 0, 0]]), 8)
    with pytest.raises(ParameterError):
        voxelize(np.zeros((0, 3)), 8)
