import numpy as np
import pytest

from octpcc.geometry import RawPointCloud


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_cloud(rng, n=200, box=1.0) -> RawPointCloud:
    return RawPointCloud(rng.uniform(-box, box, size=(n, 3)))


def brute_force_octree_counts(voxels, depth):
    """Independent octree construction: per-level node counts via prefix sets."""
    counts = []
    for lvl in range(1, depth + 1):
        shift = depth - lvl + 1
        cells = {(int(x) >> shift, int(y) >> shift, int(z) >> shift)
                 for x, y, z in voxels}
        counts.append(len(cells))
    return counts


def brute_force_level_occupancies(voxels, depth, lvl):
    """occupancy per level-`lvl` node keyed by its cell, computed by sets."""
    shift_cell = depth - lvl + 1
    shift_child = depth - lvl
    table = {}
    for x, y, z in voxels:
        cell = (int(x) >> shift_cell, int(y) >> shift_cell, int(z) >> shift_cell)
        child = (int(x) >> shift_child, int(y) >> shift_child, int(z) >> shift_child)
        octant = ((child[0] & 1) << 2) | ((child[1] & 1) << 1) | (child[2] & 1)
        table[cell] = table.get(cell, 0) | (1 << octant)
    return table
