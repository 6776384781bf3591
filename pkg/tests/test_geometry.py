import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapes import cube_shell, plane, random_voxels, sphere_shell

from pointcodec import CorruptStreamError, PointCloud, decode_geometry
from pointcodec.geometry import (
    ConversionParams,
    GeometryBitstream,
    QuantizationParams,
    _trisoup_vertices,
    convert_coordinates,
    dequantize_vertex,
    dequantize_positions,
    encode_geometry_lossless,
    encode_geometry_trisoup,
    invert_coordinates,
    partition_slices,
    quantize_positions,
    quantize_vertex,
    rasterize_triangle,
    round_half_away,
    triangulate_block,
)
from pointcodec.metrics import d_rms, d_s_rms
from pointcodec.spatial import octree_decompose


def same_set(a, b):
    return np.array_equal(np.unique(np.asarray(a), axis=0), np.unique(np.asarray(b), axis=0))


def test_round_half_away():
    np.testing.assert_array_equal(round_half_away([0.5, 1.5, -0.5, -1.5, 2.4]), [1, 2, -1, -2, 2])


def test_convert_coordinates_examples():
    c = convert_coordinates(PointCloud(np.array([[100.0, 200, 300]])), ConversionParams((100, 200, 300), 1))
    np.testing.assert_array_equal(c.positions, [[0, 0, 0]])
    c = convert_coordinates(PointCloud(np.array([[4.0, 6, 8]])), ConversionParams((0, 0, 0), 2))
    np.testing.assert_array_equal(c.positions, [[2, 3, 4]])
    rng = np.random.default_rng(0)
    p = ConversionParams(tuple(rng.normal(size=3)), 0.37)
    src = PointCloud(rng.normal(size=(100, 3)) * 50)
    back = invert_coordinates(convert_coordinates(src, p), p)
    np.testing.assert_allclose(back.positions, src.positions, rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        ConversionParams(scale=0)


def test_quantize_examples():
    q, _ = quantize_positions(PointCloud(np.array([[10.4, 2.5, 0.0]])), QuantizationParams(1, (0, 0, 0)))
    np.testing.assert_array_equal(q.positions, [[10, 3, 0]])
    q, _ = quantize_positions(PointCloud(np.array([[10.0, 2, 4]])), QuantizationParams(0.5, (0, 0, 0)))
    np.testing.assert_array_equal(q.positions, [[5, 1, 2]])
    q, inv = quantize_positions(PointCloud(np.array([[1.1, 0, 0], [0.9, 0, 0]])), QuantizationParams(1, (0, 0, 0)))
    assert len(q) == 1 and len(inv) == 2 and inv.tolist() == [0, 0]


def test_quantization_error_bound():
    rng = np.random.default_rng(1)
    X = rng.uniform(-100, 100, (500, 3))
    for s in (0.25, 1.0, 3.0):
        q, inv = quantize_positions(PointCloud(X), QuantizationParams(s, dedup=False))
        back = dequantize_positions(q.positions, s, X.min(axis=0))
        assert np.all(np.abs(back - X) <= 0.5 / s + 1e-12)


def test_partition_slices():
    cube = PointCloud(np.array([[0, 0, 0], [10, 10, 10], [5, 5, 5]]))
    assert len(partition_slices(cube)) == 1
    rng = np.random.default_rng(2)
    pts = np.column_stack([rng.uniform(0, 100, 2000), rng.uniform(0, 10, 2000), rng.uniform(0, 10, 2000)])
    pts[0], pts[1] = (0, 0, 0), (100, 10, 10)
    sl = partition_slices(PointCloud(pts))
    assert len(sl) == 10
    idx = np.sort(np.concatenate([s.indices for s in sl]))
    np.testing.assert_array_equal(idx, np.arange(len(pts)))
    for s in sl:
        assert s.bbox_max[0] - s.bbox_min[0] <= 10

    vox = random_voxels(3000, bits=8, seed=3)
    oct_sl = partition_slices(vox, "octree", 1)
    assert len(oct_sl) <= 8
    for s in oct_sl:
        octant = (vox.positions[s.indices] - vox.positions.min(axis=0)) >> 7
        assert len(np.unique(octant, axis=0)) == 1


def test_cube_corners_full_byte_no_dcm_points():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)])
    s = encode_geometry_lossless(PointCloud(corners))
    assert s.depth == 1
    assert octree_decompose(PointCloud(corners), 1).byte_stream().tolist() == [0xFF]
    assert s.stats["dcm_points"] == 0
    assert same_set(decode_geometry(s.to_bytes()).positions, corners)


def test_isolated_point_uses_dcm():
    pts = np.array([[0, 0, 0], [1, 0, 0], [1023, 1023, 1023]])
    s = encode_geometry_lossless(PointCloud(pts))
    assert s.stats["dcm_points"] >= 1
    assert len(s.dcm_points) > 0
    assert same_set(decode_geometry(s.to_bytes()).positions, pts)


@pytest.mark.parametrize("dcm", [True, False])
def test_lossless_random_and_shapes(dcm):
    for c in (random_voxels(10_000, seed=4), plane(), sphere_shell(), cube_shell()):
        s = encode_geometry_lossless(c, dcm)
        assert same_set(decode_geometry(s.to_bytes()).positions, c.positions)
    clustered = sphere_shell(30)
    s = encode_geometry_lossless(clustered, dcm)
    assert 8 * s.n_bytes / len(clustered) < 30


def test_dcm_changes_bits_not_set():
    rng = np.random.default_rng(5)
    pts = np.unique(np.concatenate([sphere_shell(15).positions, rng.integers(0, 1024, (50, 3))]), axis=0)
    a = encode_geometry_lossless(PointCloud(pts), True)
    b = encode_geometry_lossless(PointCloud(pts), False)
    assert a.n_bytes != b.n_bytes
    assert decode_geometry(a) == decode_geometry(b)


def test_duplicates_rejected():
    with pytest.raises(ValueError):
        encode_geometry_lossless(PointCloud(np.array([[1, 2, 3], [1, 2, 3]])))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(*[st.integers(0, 1023)] * 3), min_size=1, max_size=60, unique=True),
       st.booleans())
def test_lossless_property(rows, dcm):
    pts = np.array(rows, dtype=np.int64)
    s = encode_geometry_lossless(PointCloud(pts), dcm)
    assert same_set(decode_geometry(s.to_bytes()).positions, pts)


def test_bitstream_round_trip_and_corruption():
    s = encode_geometry_lossless(random_voxels(200, seed=6))
    data = s.to_bytes()
    assert GeometryBitstream.from_bytes(data) == s
    with pytest.raises(CorruptStreamError):
        decode_geometry(data[:-3])
    with pytest.raises(CorruptStreamError):
        decode_geometry(b"XXXX" + data[4:])


def test_trisoup_rejects_l_ge_d():
    c = plane(8)
    with pytest.raises(ValueError):
        encode_geometry_trisoup(c, d=4, l=4)
    with pytest.raises(ValueError):
        encode_geometry_trisoup(c, d=4, l=5)


def test_trisoup_slab_vertices_on_crossing_edges():
    # one 8^3 block cut by the plane z = 5, in block-relative coordinates
    g = np.mgrid[0:8, 0:8].reshape(2, -1).T
    pts = np.column_stack([g, np.full(len(g), 5)])
    keys, vals = _trisoup_vertices(pts, 3)
    edges = np.unique(keys, axis=0)
    assert len(edges) == 4
    assert np.all(edges[:, 0] == 2)
    np.testing.assert_array_equal(vals, 5)
    assert dequantize_vertex(quantize_vertex(5.0, 3), 3) == 5.5

    # a slab lifted off the cube floor by an anchor voxel decodes back to the plane
    anchored = np.vstack([pts + [8, 8, 8], [[0, 0, 0]]])
    dec = decode_geometry(encode_geometry_trisoup(PointCloud(anchored), d=4, l=1))
    body = dec.positions[np.all(dec.positions >= 8, axis=1)]
    assert same_set(body, pts + [8, 8, 8])


def test_three_vertex_block_single_triangle_inside():
    verts = np.array([[0.0, 0.0, 3.5], [3.5, 0.0, 0.0], [0.0, 3.5, 0.0]])
    tris = triangulate_block(verts)
    assert len(tris) == 1
    samples = rasterize_triangle(tris[0])
    assert np.all(samples >= 0) and np.all(samples <= 4)


def test_trisoup_dense_face_within_one_voxel():
    face = plane(32, z=0, offset=(0, 0, 0), colored=False)
    s = encode_geometry_trisoup(face, dbodl=1)
    dec = decode_geometry(s)
    assert d_rms(dec, face) <= 1
    assert np.max(np.abs(dec.positions[:, 2])) <= 1


@pytest.mark.parametrize("dbodl", [1, 2])
def test_trisoup_distance_bound(dbodl):
    for c in (plane(48, colored=False), sphere_shell(16, colored=False)):
        dec = decode_geometry(encode_geometry_trisoup(c, dbodl=dbodl).to_bytes())
        assert d_s_rms(c, dec) <= (2 ** dbodl) * np.sqrt(3)


def test_empty_cloud_streams():
    empty = PointCloud(np.zeros((0, 3), dtype=np.int64))
    assert len(decode_geometry(encode_geometry_lossless(empty).to_bytes())) == 0
    single = PointCloud(np.array([[5, 6, 7]]))
    np.testing.assert_array_equal(decode_geometry(encode_geometry_lossless(single).to_bytes()).positions,
                                  [[5, 6, 7]])


def test_encoder_reconstruction_matches_decoder():
    for seed in range(8):
        c = PointCloud(random_voxels(int(10 ** (0.5 * seed)), seed=seed).positions)
        for dcm in (True, False):
            s = encode_geometry_lossless(c, dcm)
            np.testing.assert_array_equal(s.stats["reconstruction"], decode_geometry(s.to_bytes()).positions)
