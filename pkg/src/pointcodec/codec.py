"""End-to-end codec with an estimator-style interface and the PCCX container.

Pipeline: quantize positions, code geometry, decode it, transfer the original
colors onto the decoded voxels, then code colors against that geometry.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted, check_scalar

from .attributes import CODERS, AttributeBitstream, attribute_decode, attribute_encode, attribute_transfer
from .cloud import PointCloud, as_point_cloud
from .container import CorruptStreamError, pack_sections, unpack_sections
from .geometry import (
    GeometryBitstream,
    QuantizationParams,
    decode_geometry,
    dequantize_positions,
    encode_geometry_lossless,
    encode_geometry_trisoup,
    partition_slices,
    quantize_positions,
)
from .metrics import rgb_to_yuv, yuv_to_rgb
from .vpcc import VpccParams, vpcc_decode, vpcc_encode

CONTAINER_MAGIC = b"PCCX"
CONTAINER_VERSION = 1
SLICE_MAGIC = b"PSLC"
GEOMETRY_MODES = ("octree", "trisoup", "vpcc")


def _to_cloud(X, colors=None) -> PointCloud:
    if isinstance(X, PointCloud):
        return X
    return as_point_cloud(X, colors)


def _nested(streams) -> bytes:
    return pack_sections(SLICE_MAGIC, 1, list(streams))


def _unnested(data: bytes) -> list:
    return unpack_sections(data, SLICE_MAGIC, 1)[1]


@dataclass
class EncodeReport:
    n_points: int
    geometry_bits: int
    color_bits: int
    total_bits: int
    seconds: float
    extra: dict = field(default_factory=dict)

    @property
    def bpp_geom(self) -> float:
        return self.geometry_bits / max(self.n_points, 1)

    @property
    def bpp_color(self) -> float:
        return self.color_bits / max(self.n_points, 1)

    @property
    def bpp_total(self) -> float:
        return self.total_bits / max(self.n_points, 1)


class GeometryCodec(BaseEstimator):
    """Position quantization plus octree (optionally DCM) or trisoup coding."""

    def __init__(self, mode: str = "octree", pqs: float = 1.0, dbodl: int = 2, dcm: bool = True):
        self.mode = mode
        self.pqs = pqs
        self.dbodl = dbodl
        self.dcm = dcm

    def _validate(self):
        if self.mode not in ("octree", "trisoup"):
            raise ValueError(f"geometry mode must be 'octree' or 'trisoup', got {self.mode!r}")
        check_scalar(self.pqs, "pqs", (int, float), min_val=0, include_boundaries="neither")
        check_scalar(self.dbodl, "dbodl", int, min_val=1)

    def fit(self, X, y=None):
        self._validate()
        cloud = _to_cloud(X)
        if len(cloud) == 0:
            raise ValueError("cannot fit on an empty cloud")
        self.x_min_ = np.asarray(cloud.positions, dtype=np.float64).min(axis=0)
        return self

    def quantize(self, X) -> PointCloud:
        check_is_fitted(self)
        q, _ = quantize_positions(_to_cloud(X), QuantizationParams(float(self.pqs), tuple(self.x_min_)))
        return q

    def encode(self, quantized: PointCloud) -> GeometryBitstream:
        check_is_fitted(self)
        header = {"q": float(self.pqs), "x_min": tuple(self.x_min_)}
        if self.mode == "trisoup":
            return encode_geometry_trisoup(quantized, dbodl=self.dbodl, **header)
        mode = "lossless" if self.pqs == 1 else "quantize-only"
        return encode_geometry_lossless(quantized, self.dcm, mode=mode, **header)

    def decode(self, data) -> PointCloud:
        return decode_geometry(data)

    def transform(self, X) -> np.ndarray:
        """World-frame positions after a full geometry round trip."""
        q = self.quantize(X)
        dec = self.decode(self.encode(q).to_bytes())
        return dequantize_positions(dec.positions, float(self.pqs), self.x_min_)

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)


class AttributeCodec(BaseEstimator):
    """Color coding against already-decoded geometry.

    ``qstep == 0`` codes colors losslessly; the predict coder is also lossless
    at ``qstep == 1``.
    """

    def __init__(self, coder: str = "raht", qstep: float = 0.0, k: int = 3, lodc: int = 8):
        self.coder = coder
        self.qstep = qstep
        self.k = k
        self.lodc = lodc

    def _validate(self):
        if self.coder not in CODERS:
            raise ValueError(f"coder must be one of {CODERS}, got {self.coder!r}")
        check_scalar(self.qstep, "qstep", (int, float), min_val=0)
        check_scalar(self.k, "k", int, min_val=1)
        check_scalar(self.lodc, "lodc", int, min_val=1)

    @property
    def lossless(self) -> bool:
        return self.qstep == 0 or (self.coder == "predict" and self.qstep <= 1)

    def fit(self, X, y=None):
        self._validate()
        self.n_features_in_ = 3
        return self

    def encode(self, cloud: PointCloud) -> AttributeBitstream:
        check_is_fitted(self)
        return attribute_encode(cloud, self.coder, self.qstep, self.k, lodc=self.lodc)

    def decode(self, data, geometry: PointCloud) -> PointCloud:
        return attribute_decode(data, geometry)

    def transform(self, X) -> np.ndarray:
        """Decoded colors of a voxelized colored cloud."""
        cloud = _to_cloud(X)
        return self.decode(self.encode(cloud).to_bytes(), PointCloud(cloud.positions)).colors

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)


class PointCloudCodec(BaseEstimator):
    """Full encoder/decoder; ``transform`` returns the reconstructed cloud.

    ``geometry`` selects octree, trisoup or projection (``"vpcc"``) coding.
    ``qstep`` drives the color coder (texture images under ``"vpcc"``);
    ``qstep == 0`` codes colors losslessly in RGB, otherwise colors go through
    BT.709 YUV.
    """

    def __init__(self, geometry: str = "octree", attribute: str = "raht", pqs: float = 1.0,
                 dbodl: int = 2, dcm: bool = True, qstep: float = 0.0, k: int = 3, lodc: int = 8,
                 slice_method=None, slice_param=None, vpcc_delta: int = 4,
                 vpcc_geometry_qstep: float = 1.0):
        self.geometry = geometry
        self.attribute = attribute
        self.pqs = pqs
        self.dbodl = dbodl
        self.dcm = dcm
        self.qstep = qstep
        self.k = k
        self.lodc = lodc
        self.slice_method = slice_method
        self.slice_param = slice_param
        self.vpcc_delta = vpcc_delta
        self.vpcc_geometry_qstep = vpcc_geometry_qstep

    def _validate(self):
        if self.geometry not in GEOMETRY_MODES:
            raise ValueError(f"geometry must be one of {GEOMETRY_MODES}, got {self.geometry!r}")
        if self.slice_method not in (None, "longest-edge", "octree"):
            raise ValueError(f"unknown slice method {self.slice_method!r}")
        check_scalar(self.vpcc_delta, "vpcc_delta", int, min_val=0)
        self.geometry_codec_ = GeometryCodec(
            "trisoup" if self.geometry == "trisoup" else "octree", self.pqs, self.dbodl, self.dcm)
        self.geometry_codec_._validate()
        self.attribute_codec_ = AttributeCodec(self.attribute, self.qstep, self.k, self.lodc)
        self.attribute_codec_._validate()

    def fit(self, X, y=None):
        self._validate()
        cloud = _to_cloud(X)
        self.geometry_codec_.fit(cloud)
        self.attribute_codec_.fit(cloud)
        self.x_min_ = self.geometry_codec_.x_min_
        return self

    @property
    def _color_space(self) -> str:
        if self.geometry == "vpcc":
            return "RGB" if self.qstep <= 1 else "YUV"
        return "RGB" if self.attribute_codec_.lossless else "YUV"

    def encode(self, X, colors=None) -> tuple:
        """``(container_bytes, EncodeReport)``; fits first."""
        t0 = time.perf_counter()
        cloud = _to_cloud(X, colors)
        self.fit(cloud)
        gc = self.geometry_codec_
        quantized = gc.quantize(cloud)
        has_color = cloud.colors is not None
        if cloud.color_space != "RGB":
            raise ValueError("input colors must be RGB")
        trailer = {
            "params": self.get_params(), "n_points": len(cloud), "x_min": self.x_min_.tolist(),
            "integer": bool(cloud.is_integer), "color_space": self._color_space,
            "has_color": has_color,
        }
        geom_s, attr_s, vpcc_s = b"", b"", b""
        extra = {}
        if self.geometry == "vpcc":
            src = quantized
            if has_color and self._color_space == "YUV":
                src = rgb_to_yuv(quantized)
            params = VpccParams(delta=self.vpcc_delta, geometry_qstep=self.vpcc_geometry_qstep,
                                texture_qstep=max(self.qstep, 1.0))
            vpcc_s = vpcc_encode(src, params)
            _, secs = unpack_sections(vpcc_s, b"VPCF", 1)
            tex = sum(len(s) + 4 for s in secs[5:])
            geometry_bits, color_bits = 8 * (len(vpcc_s) - tex), 8 * tex
        else:
            if self.slice_method is None:
                slices = [np.arange(len(quantized))]
            else:
                slices = [s.indices for s in partition_slices(quantized, self.slice_method, self.slice_param)]
            g_streams, a_streams = [], []
            for idx in slices:
                part = quantized.take(idx)
                gs = gc.encode(part)
                g_streams.append(gs.to_bytes())
                if has_color:
                    recon = gs.stats.get("reconstruction")
                    dec = PointCloud(recon) if recon is not None else decode_geometry(gs)
                    recolored = attribute_transfer(cloud, dec, float(self.pqs), self.x_min_)
                    if self._color_space == "YUV":
                        recolored = rgb_to_yuv(recolored)
                    a_streams.append(self.attribute_codec_.encode(recolored).to_bytes())
            geom_s = _nested(g_streams)
            attr_s = _nested(a_streams) if has_color else b""
            geometry_bits, color_bits = 8 * len(geom_s), 8 * len(attr_s)
            extra["slices"] = len(slices)
        trailer_s = json.dumps(trailer, sort_keys=True, default=_json_default).encode()
        data = pack_sections(CONTAINER_MAGIC, CONTAINER_VERSION, [geom_s, attr_s, vpcc_s, trailer_s])
        report = EncodeReport(len(cloud), geometry_bits, color_bits, 8 * len(data),
                              time.perf_counter() - t0, extra)
        return data, report

    @staticmethod
    def decode(data: bytes) -> PointCloud:
        _, sections = unpack_sections(data, CONTAINER_MAGIC, CONTAINER_VERSION)
        if len(sections) != 4:
            raise CorruptStreamError("container needs 4 sections")
        geom_s, attr_s, vpcc_s, trailer_s = sections
        try:
            trailer = json.loads(trailer_s.decode())
            params = trailer["params"]
            x_min = np.asarray(trailer["x_min"], dtype=np.float64)
            pqs = float(params["pqs"])
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptStreamError(f"bad container trailer: {exc}") from exc

        if params["geometry"] == "vpcc":
            rec = vpcc_decode(vpcc_s)
            positions, colors = rec.positions, rec.colors
            if colors is not None and rec.color_space == "YUV":
                colors = yuv_to_rgb(rec).colors
        else:
            parts_g = _unnested(geom_s)
            parts_a = _unnested(attr_s) if trailer["has_color"] else [None] * len(parts_g)
            if len(parts_a) != len(parts_g):
                raise CorruptStreamError("geometry and attribute slice counts differ")
            pos_l, col_l = [], []
            for g, a in zip(parts_g, parts_a):
                geom = decode_geometry(g)
                pos_l.append(geom.positions)
                if a is not None:
                    c = attribute_decode(a, geom)
                    col_l.append(yuv_to_rgb(c).colors if c.color_space == "YUV" else c.colors)
            positions = np.concatenate(pos_l) if pos_l else np.zeros((0, 3), dtype=np.int64)
            colors = np.concatenate(col_l) if col_l else None
        world = dequantize_positions(positions, pqs, x_min)
        if trailer["integer"] and pqs == 1 and np.all(x_min == np.round(x_min)):
            world = np.asarray(positions, dtype=np.int64) + x_min.astype(np.int64)
        return PointCloud(world, colors)

    def transform(self, X, colors=None) -> PointCloud:
        data, _ = self.encode(X, colors)
        return self.decode(data)

    def fit_transform(self, X, y=None):
        return self.transform(X)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
