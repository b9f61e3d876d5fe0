import numpy as np
import pytest

from kpcc.pointcloud import PointCloud


def random_cloud(rng: np.random.Generator, bit_depth: int, n: int) -> PointCloud:
    """Uniform random voxels; duplicates allowed so dedup paths get exercised."""
    coords = rng.integers(0, 1 << bit_depth, size=(n, 3), dtype=np.int64)
    return PointCloud(coords, bit_depth)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260814)
