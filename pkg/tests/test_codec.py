import numpy as np
import pytest
from shapes import plane, random_voxels, sphere_shell

from pointcodec import AttributeCodec, CorruptStreamError, GeometryCodec, PointCloud, PointCloudCodec
from pointcodec.bench import ExperimentConfig, bd_table, rows_to_csv, sweep
from pointcodec.metrics import evaluate


@pytest.mark.parametrize("attribute", ["raht", "predict", "lifting"])
def test_lossless_pipeline(attribute):
    c = random_voxels(1500, seed=1)
    data, report = PointCloudCodec(attribute=attribute).encode(c)
    out = PointCloudCodec.decode(data)
    assert out.sorted() == c.sorted()
    assert out.positions.dtype.kind == "i"
    assert report.total_bits == 8 * len(data)
    assert report.geometry_bits + report.color_bits < report.total_bits


def test_lossless_with_slices_and_float_input():
    c = sphere_shell(14)
    for method, param in (("octree", 1), ("longest-edge", 8)):
        codec = PointCloudCodec(attribute="predict", slice_method=method, slice_param=param)
        data, report = codec.encode(c)
        assert report.extra["slices"] > 1
        assert PointCloudCodec.decode(data).sorted() == c.sorted()
    f = PointCloud(c.positions.astype(float) + 0.25, c.colors)
    out = PointCloudCodec().transform(f)
    np.testing.assert_allclose(np.unique(out.positions, axis=0), np.unique(np.floor(f.positions), axis=0) + 0.25)


def test_lossy_paths_reasonable():
    c = plane(40)
    for geometry, kw in (("octree", {"pqs": 0.5}), ("trisoup", {"dbodl": 2}), ("vpcc", {})):
        codec = PointCloudCodec(geometry=geometry, attribute="lifting", qstep=8, **kw)
        out = codec.transform(c)
        ev = evaluate(c, out)
        assert ev.psnr_g > 20
        assert ev.psnr_c["Y"] > 25


def test_estimator_params():
    codec = PointCloudCodec(attribute="predict", qstep=4)
    params = codec.get_params()
    assert params["attribute"] == "predict" and params["qstep"] == 4
    codec.set_params(qstep=2)
    assert codec.qstep == 2
    with pytest.raises(ValueError):
        PointCloudCodec(geometry="mesh").fit(plane(4))
    with pytest.raises(ValueError):
        GeometryCodec(pqs=0).fit(plane(4))
    with pytest.raises(ValueError):
        GeometryCodec(mode="trisoup", dbodl=0).fit(plane(4))
    with pytest.raises(ValueError):
        AttributeCodec(coder="dct").fit(plane(4))


def test_sub_estimators():
    c = random_voxels(300, seed=2)
    np.testing.assert_array_equal(np.unique(GeometryCodec().fit_transform(c), axis=0),
                                  np.unique(c.positions, axis=0))
    np.testing.assert_array_equal(AttributeCodec("lifting", 0).fit_transform(c), c.colors)


def test_container_corruption():
    data, _ = PointCloudCodec().encode(random_voxels(100, seed=3))
    with pytest.raises(CorruptStreamError):
        PointCloudCodec.decode(data[:-1])
    with pytest.raises(CorruptStreamError):
        PointCloudCodec.decode(b"JUNK" + data[4:])


def test_geometry_only_cloud():
    c = PointCloud(random_voxels(200, seed=4).positions)
    out = PointCloudCodec().transform(c)
    assert out.colors is None and out.sorted() == c.sorted()


def test_sweep_and_bd_table():
    cfg = ExperimentConfig(case=2, coders=("raht", "predict"), qsteps=(2, 4, 8, 16))
    rows = sweep(cfg, {"plane": plane(24)})
    assert len(rows) == 8
    for coder in ("raht", "predict"):
        rates = [r["bpp_total"] for r in rows if r["coder"] == coder]
        assert all(b < a for a, b in zip(rates, rates[1:]))
    assert all(r["psnr_g"] == 999.0 for r in rows)
    bd = bd_table(rows)
    assert len(bd) == 1 and bd[0]["coder"] == "predict"
    csv = rows_to_csv(rows)
    assert csv.splitlines()[0].startswith("dataset,case,coder")
    assert bd_table([r for r in rows if r["coder"] == "raht"]) == []
    twin = [dict(r, coder="raht2") for r in rows if r["coder"] == "raht"] + [r for r in rows if r["coder"] == "raht"]
    t = bd_table(twin)
    assert abs(t[0]["bd_psnr"]) < 1e-9 and abs(t[0]["bd_rate"]) < 1e-6


def test_case_rules():
    c1 = ExperimentConfig(case=1, pqs=(0.5,), qsteps=(8,))
    assert c1.ladder() == [(1.0, 2, 0.0)]
    with pytest.raises(ValueError):
        ExperimentConfig(case=2, qsteps=(0,))
    with pytest.raises(ValueError):
        ExperimentConfig(case=1, geometry="trisoup")
    c3 = ExperimentConfig(case=3, pqs=(1, 0.5, 0.25), qsteps=(4,))
    assert [p for p, _, _ in c3.ladder()] == [1, 0.5, 0.25]
    with pytest.raises(ValueError):
        ExperimentConfig(case=3, pqs=(1, 0.5), qsteps=(1, 2, 3)).ladder()


def test_case1_rows_capped():
    rows = sweep(ExperimentConfig(case=1, coders=("raht", "vpcc")), {"p": plane(16)})
    for r in rows:
        assert r["psnr_g"] == r["psnr_y"] == r["psnr_u"] == r["psnr_v"] == 999.0


def test_sweep_deterministic():
    cfg = ExperimentConfig(case=3, coders=("lifting",), pqs=(1, 0.5), qsteps=(4, 8))
    a = [{k: v for k, v in r.items() if not k.endswith("_s")} for r in sweep(cfg, {"s": sphere_shell(10)})]
    b = [{k: v for k, v in r.items() if not k.endswith("_s")} for r in sweep(cfg, {"s": sphere_shell(10)})]
    assert a == b
