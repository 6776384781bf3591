import numpy as np
import pytest
from shapes import plane, sphere_shell

from pointcodec import PointCloud
from pointcodec.metrics import d_s_rms
from pointcodec.vpcc import (
    PLANE_DIRS,
    OccupancyMap,
    VpccParams,
    ZlibImageCodec,
    build_occupancy_map,
    cluster_to_planes,
    estimate_normals,
    extract_patches,
    pack_patches,
    pad_image,
    project_frames,
    vpcc_decode,
    vpcc_encode,
)


def test_plane_normals_analytic():
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(0, 10, 300), rng.uniform(0, 10, 300), np.zeros(300)])
    n = estimate_normals(pts, 8)
    np.testing.assert_allclose(np.abs(n), np.tile([0, 0, 1], (300, 1)), atol=1e-6)


def test_sphere_normals_radial():
    v = np.random.default_rng(1).normal(size=(2000, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    n = estimate_normals(v * 30, 12)
    assert np.all(np.abs(np.einsum("ij,ij->i", n, v)) >= 0.99)


def test_three_points_normal():
    n = estimate_normals(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), 3)
    np.testing.assert_allclose(np.abs(n), np.tile([0, 0, 1], (3, 1)), atol=1e-12)
    line = estimate_normals(np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]]), 3)
    np.testing.assert_allclose(line[:, 0], 0, atol=1e-12)
    with pytest.raises(ValueError):
        estimate_normals(np.zeros((5, 3)), 2)


def test_cluster_labels():
    assert cluster_to_planes([[0, 0, 1]]).tolist() == [4]
    assert cluster_to_planes([np.array([1, 1, 0]) / np.sqrt(2)]).tolist() == [0]
    rng = np.random.default_rng(2)
    n = rng.normal(size=(500, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    expect = []
    for row in n:
        best, arg = -np.inf, -1
        for j, d in enumerate(PLANE_DIRS):
            if row @ d > best:
                best, arg = row @ d, j
        expect.append(arg)
    assert cluster_to_planes(n).tolist() == expect


def test_patches_square_and_disjoint():
    sq = plane(10, colored=False)
    patches = extract_patches(sq, np.full(len(sq), 4))
    assert len(patches) == 1
    p = patches[0]
    assert np.all(p.mask) and np.array_equal(p.near, p.far)
    two = PointCloud(np.vstack([sq.positions, sq.positions + [50, 0, 0]]))
    assert len(extract_patches(two, np.full(len(two), 4))) == 2


def test_near_far_layers():
    # (1,0,6) bridges the two voxels of pixel (0,0) into one component; z=20 is beyond delta
    pts = np.array([[0, 0, 5], [0, 0, 7], [0, 0, 20], [1, 0, 6]])
    # -Z plane: depth grows with z
    p = extract_patches(PointCloud(pts), np.full(4, 5), delta=4)
    first = [q for q in p if q.near_index[0, 0] == 0][0]
    assert first.near[0, 0] == 0 and first.far[0, 0] == 2
    assert first.far_index[0, 0] == 1
    assert first.far[0, 0] - first.near[0, 0] <= 4


def random_patches(rng, n):
    pts, labels, base = [], [], 0
    for _ in range(n):
        w, h = rng.integers(1, 40, 2)
        g = np.mgrid[0:w, 0:h].reshape(2, -1).T
        keep = rng.random(len(g)) < 0.7
        keep[0] = True
        g = g[keep]
        pts.append(np.column_stack([g[:, 0] + base, g[:, 1], np.full(len(g), 3)]))
        labels.append(np.full(len(g), 4))
        base += int(w) + 5
    return PointCloud(np.vstack(pts)), np.concatenate(labels)


def test_packing_no_overlap_and_order():
    rng = np.random.default_rng(3)
    for trial in range(10):
        cloud, labels = random_patches(rng, int(rng.integers(1, 25)))
        patches = extract_patches(cloud, labels)
        W, H = pack_patches(patches, width=256)
        canvas = np.zeros((H, W), dtype=int)
        for p in patches:
            assert p.u0 % 16 == 0 and p.v0 % 16 == 0
            assert p.u0 + p.width <= W and p.v0 + p.height <= H
            canvas[p.v0:p.v0 + p.height, p.u0:p.u0 + p.width] += p.mask
        assert canvas.max() <= 1
    one = extract_patches(plane(5, colored=False), np.full(25, 4))
    pack_patches(one)
    assert (one[0].u0, one[0].v0) == (0, 0)


def test_packing_largest_first():
    cloud = PointCloud(np.vstack([
        np.column_stack([np.mgrid[0:5, 0:10].reshape(2, -1).T, np.zeros(50, int)]),
        np.column_stack([np.mgrid[0:10, 0:10].reshape(2, -1).T + [40, 0], np.zeros(100, int)]),
    ]))
    patches = extract_patches(cloud, np.full(len(cloud), 4))
    assert sorted(p.area for p in patches) == [50, 100]
    pack_patches(patches)
    big = max(patches, key=lambda p: p.area)
    assert (big.u0, big.v0) == (0, 0)


def test_occupancy_map_invariants():
    full = np.ones((16, 16), dtype=bool)
    assert build_occupancy_map(full).block_flags.tolist() == [[True]]
    one = np.zeros((16, 32), dtype=bool)
    one[5, 6] = True
    om = build_occupancy_map(one)
    assert om.sub_flags.sum() == 1 and om.sub_flags[1, 1]
    assert not om.block_flags.any()
    assert not build_occupancy_map(np.zeros((32, 32), bool)).sub_flags.any()
    rng = np.random.default_rng(4)
    for _ in range(20):
        occ = rng.random((64, 48)) < rng.random()
        om = build_occupancy_map(occ)
        assert isinstance(om, OccupancyMap) and om.check(occ)
        for by in range(4):
            for bx in range(3):
                blk = om.sub_flags[by * 4:(by + 1) * 4, bx * 4:(bx + 1) * 4]
                assert om.block_flags[by, bx] == blk.all()


def test_occupancy_map_on_packed_frames():
    c = sphere_shell(12)
    frames = project_frames(c, extract_patches(c, cluster_to_planes(estimate_normals(c, 12)), max_rounds=4))
    om = build_occupancy_map(frames)
    assert om.check(frames.occupancy)
    assert np.array_equal(frames.patch_map >= 0, frames.occupancy)


def test_padding():
    img = np.arange(16.0).reshape(4, 4)
    np.testing.assert_array_equal(pad_image(img, np.ones((4, 4), bool)), img)
    occ = np.zeros((9, 9), bool)
    occ[4, 4] = True
    img = np.zeros((9, 9))
    img[4, 4] = 77
    np.testing.assert_allclose(pad_image(img, occ), 77)
    rng = np.random.default_rng(5)
    occ = (np.indices((12, 12)).sum(axis=0) % 2) == 0
    img = rng.uniform(10, 200, (12, 12))
    out = pad_image(img, occ)
    np.testing.assert_array_equal(out[occ], img[occ])
    assert out[~occ].min() >= img[occ].min() and out[~occ].max() <= img[occ].max()


def test_image_codec():
    codec = ZlibImageCodec()
    img = np.random.default_rng(6).integers(0, 1024, (20, 30))
    np.testing.assert_array_equal(codec.decode(codec.encode(img))[:, :, 0], img)
    lossy = codec.decode(codec.encode(img, 2))[:, :, 0]
    assert np.abs(lossy - img).max() <= 1


def test_flat_square_lossless():
    sq = plane(20)
    out = vpcc_decode(vpcc_encode(sq))
    assert out.sorted() == sq.sorted()


def test_lossy_depth_error_bound():
    sq = plane(20)
    out = vpcc_decode(vpcc_encode(sq, VpccParams(geometry_qstep=2))).sorted()
    ref = sq.sorted()
    assert len(out) == len(ref)
    np.testing.assert_array_equal(out.positions[:, :2], ref.positions[:, :2])
    assert np.abs(out.positions[:, 2] - ref.positions[:, 2]).max() <= 1


def test_sphere_shell_distance():
    s = sphere_shell(15)
    out = vpcc_decode(vpcc_encode(s, VpccParams(max_rounds=1)))
    assert d_s_rms(s, out) <= 4
