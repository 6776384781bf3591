import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointcodec import PlyError, PointCloud, read_ply, write_ply

ASCII_ONE = (b"ply\nformat ascii 1.0\nelement vertex 1\n"
             b"property float x\nproperty float y\nproperty float z\n"
             b"property uchar red\nproperty uchar green\nproperty uchar blue\n"
             b"end_header\n0 0 0 255 0 0\n")


def binary_one():
    # hand-built little-endian record: 3 float32 then 3 uint8
    header = (b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
              b"property float x\nproperty float y\nproperty float z\n"
              b"property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n")
    return header + struct.pack("<fffBBB", 0.0, 0.0, 0.0, 255, 0, 0)


def test_ascii_single_vertex():
    c = read_ply(ASCII_ONE)
    assert len(c) == 1
    np.testing.assert_array_equal(c.positions, [[0, 0, 0]])
    np.testing.assert_array_equal(c.colors, [[255, 0, 0]])


def test_binary_matches_ascii():
    assert read_ply(binary_one()) == read_ply(ASCII_ONE)


def test_truncated_body():
    data = ASCII_ONE.replace(b"element vertex 1", b"element vertex 5")
    with pytest.raises(PlyError):
        read_ply(data)
    data = binary_one().replace(b"element vertex 1", b"element vertex 5")
    with pytest.raises(PlyError) as err:
        read_ply(data)
    assert err.value.offset >= 0


def test_bad_magic_and_big_endian():
    with pytest.raises(PlyError):
        read_ply(b"plx\n")
    with pytest.raises(PlyError):
        read_ply(binary_one().replace(b"binary_little_endian", b"binary_big_endian"))


def test_empty_cloud():
    for mode in ("ascii", "binary-le"):
        data = write_ply(PointCloud(np.zeros((0, 3), dtype=np.int64)), mode)
        assert b"element vertex 0" in data
        assert len(read_ply(data)) == 0


@pytest.mark.parametrize("mode", ["ascii", "binary-le"])
def test_two_point_round_trip(mode):
    c = PointCloud(np.array([[1, 2, 3], [4, 5, 6]]), np.array([[10, 20, 30], [40, 50, 60]]))
    assert read_ply(write_ply(c, mode)) == c


def test_aliases_and_faces_skipped():
    data = (b"ply\nformat ascii 1.0\nelement vertex 2\nproperty int x\nproperty int y\nproperty int z\n"
            b"property uchar r\nproperty uchar g\nproperty uchar b\n"
            b"property float nx\nproperty float ny\nproperty float nz\n"
            b"element face 1\nproperty list uchar int vertex_indices\nend_header\n"
            b"1 2 3 9 8 7 0 0 1\n4 5 6 1 2 3 1 0 0\n3 0 1 1\n")
    c = read_ply(data)
    np.testing.assert_array_equal(c.colors, [[9, 8, 7], [1, 2, 3]])
    np.testing.assert_array_equal(c.normals, [[0, 0, 1], [1, 0, 0]])
    assert c.is_integer


def test_double_positions_lossless():
    rng = np.random.default_rng(3)
    c = PointCloud(rng.normal(size=(20, 3)) * 1e3)
    for mode in ("ascii", "binary-le"):
        np.testing.assert_array_equal(read_ply(write_ply(c, mode)).positions, c.positions)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(*[st.integers(-2**31, 2**31 - 1)] * 3, *[st.integers(0, 255)] * 3),
                max_size=30), st.sampled_from(["ascii", "binary-le"]))
def test_integer_round_trip_property(rows, mode):
    arr = np.array(rows, dtype=np.int64).reshape(-1, 6)
    c = PointCloud(arr[:, :3], arr[:, 3:])
    assert read_ply(write_ply(c, mode)) == c
