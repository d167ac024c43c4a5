import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import bfs_components, dice_by_counting
from segfuse.components import (
    Connectivity,
    binary_dice,
    filter_min_volume,
    label_components,
)
from segfuse.volume import BinaryMask, Geometry, GeometryError, LabelVolume

G8 = Geometry((8, 8, 8), (1, 1, 1))


def mask(data, spacing=(1, 1, 1)):
    data = np.asarray(data, bool)
    return BinaryMask(Geometry(data.shape, spacing), data)


def test_empty_mask():
    assert label_components(mask(np.zeros((3, 3, 3)))).count == 0


def test_corner_touching_voxels():
    data = np.zeros((3, 3, 3), bool)
    data[0, 0, 0] = data[1, 1, 1] = True
    assert label_components(mask(data), Connectivity.VERTEX26).count == 1
    assert label_components(mask(data), Connectivity.FACE6).count == 2


def test_ids_ordered_by_x_fastest_first_voxel():
    data = np.zeros((4, 4, 4), bool)
    data[3, 0, 0] = True  # linear index 3
    data[0, 2, 0] = True  # linear index 8
    data[0, 0, 1] = True  # linear index 16
    ids = label_components(mask(data), Connectivity.FACE6).ids
    assert (ids[3, 0, 0], ids[0, 2, 0], ids[0, 0, 1]) == (1, 2, 3)


def test_component_statistics():
    data = np.zeros((6, 5, 4), bool)
    data[1:3, 1:4, 0:2] = True
    data[5, 4, 3] = True
    lab = label_components(mask(data, spacing=(0.5, 1.0, 2.0)))
    big, single = lab.components
    assert big.voxel_count == 12 and big.volume_mm3 == 12.0
    assert big.bbox_min == (1, 1, 0) and big.bbox_max == (2, 3, 1)
    assert single.voxel_count == 1 and single.bbox_min == single.bbox_max == (5, 4, 3)


@pytest.mark.parametrize("conn, k", [(Connectivity.FACE6, 6), (Connectivity.VERTEX26, 26)])
def test_matches_bfs_oracle_on_random_masks(conn, k):
    r = np.random.default_rng(99)
    for _ in range(200):
        data = r.random((8, 8, 8)) < r.uniform(0.05, 0.7)
        assert np.array_equal(label_components(mask(data), conn).ids, bfs_components(data, k))


@settings(max_examples=60, deadline=None)
@given(arrays(bool, st.tuples(*[st.integers(1, 6)] * 3)))
def test_partition_invariants(data):
    lab = label_components(mask(data))
    assert np.array_equal(lab.ids > 0, data)
    assert [c.id for c in lab.components] == list(range(1, lab.count + 1))
    assert sum(c.voxel_count for c in lab.components) == data.sum()


def test_dice_examples():
    a = np.zeros((10, 1, 1), bool)
    b = np.zeros((10, 1, 1), bool)
    a[0:4] = True
    b[1:7] = True
    assert binary_dice(mask(a), mask(b)) == 0.6
    assert binary_dice(mask(a), mask(a)) == 1.0
    c = np.zeros((10, 1, 1), bool)
    c[8:] = True
    assert binary_dice(mask(a), mask(c)) == 0.0
    empty = np.zeros((10, 1, 1), bool)
    assert binary_dice(mask(empty), mask(empty)) == 1.0
    assert binary_dice(mask(empty), mask(a)) == 0.0


def test_dice_geometry_mismatch():
    with pytest.raises(GeometryError):
        binary_dice(mask(np.ones((2, 2, 2))), mask(np.ones((2, 2, 3))))


@settings(max_examples=60, deadline=None)
@given(arrays(bool, (4, 3, 2)), arrays(bool, (4, 3, 2)))
def test_dice_symmetric_and_matches_counting(a, b):
    d = binary_dice(mask(a), mask(b))
    assert d == binary_dice(mask(b), mask(a))
    assert d == dice_by_counting(a, b)
    assert 0.0 <= d <= 1.0
    assert (d == 1.0) == np.array_equal(a, b)


def _blob_labels(n_voxels, spacing=(1, 1, 1)):
    flat = np.zeros(30 * 30 * 30, np.uint8)
    flat[:n_voxels] = 1  # a contiguous run of rows is one 26-connected blob
    return LabelVolume(Geometry((30, 30, 30), spacing), flat.reshape((30, 30, 30), order="F"))


def test_min_volume_strict_threshold():
    below = _blob_labels(9_999)
    assert label_components(below.foreground).count == 1
    assert not filter_min_volume(below, 10_000.0).data.any()
    at = _blob_labels(10_000)
    assert filter_min_volume(at, 10_000.0) == at


def test_min_volume_zero_threshold_identity(rng):
    labels = LabelVolume(Geometry((6, 6, 6), (1, 1, 1)), rng.integers(0, 4, (6, 6, 6)))
    assert filter_min_volume(labels, 0.0) == labels


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, (6, 5, 4), elements=st.integers(0, 3)), st.floats(0, 40))
def test_min_volume_properties(data, threshold):
    labels = LabelVolume(Geometry(data.shape, (1, 1, 1.5)), data)
    out = filter_min_volume(labels, threshold)
    assert not (out.foreground.data & ~labels.foreground.data).any()
    kept = out.data != 0
    assert np.array_equal(out.data[kept], labels.data[kept])
    assert filter_min_volume(out, threshold) == out
