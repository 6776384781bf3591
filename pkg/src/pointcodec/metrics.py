"""Point-to-point distortion, PSNR, color conversion and Bjontegaard deltas."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import interpolate

from .cloud import PointCloud
from .spatial import nearest_indices, squared_distances

PSNR_CAP = 999.0
CHANNELS = ("geometry", "Y", "U", "V")

# BT.709 luma weights
KR, KB = 0.2126, 0.0722
KG = 1.0 - KR - KB


@dataclass
class RdPoint:
    rate: float
    psnr: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be > 0")


@dataclass
class DistanceReport:
    d_rms_ab: float
    d_rms_ba: float
    d_s_rms: float
    omega: float
    psnr_g: float
    psnr_c: dict


def _round(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def rgb_to_yuv(cloud: PointCloud) -> PointCloud:
    """Full-range BT.709, rounded to 8-bit integers."""
    if cloud.colors is None:
        raise ValueError("cloud has no colors")
    if cloud.color_space != "RGB":
        raise ValueError(f"expected an RGB cloud, got {cloud.color_space}")
    rgb = cloud.colors.astype(np.float64)
    y = KR * rgb[:, 0] + KG * rgb[:, 1] + KB * rgb[:, 2]
    u = (rgb[:, 2] - y) / (2 * (1 - KB)) + 128
    v = (rgb[:, 0] - y) / (2 * (1 - KR)) + 128
    yuv = np.clip(_round(np.stack([y, u, v], axis=1)), 0, 255).astype(np.uint8)
    return PointCloud(cloud.positions, yuv, cloud.normals, "YUV")


def yuv_to_rgb(cloud: PointCloud) -> PointCloud:
    if cloud.colors is None:
        raise ValueError("cloud has no colors")
    if cloud.color_space != "YUV":
        raise ValueError(f"expected a YUV cloud, got {cloud.color_space}")
    yuv = cloud.colors.astype(np.float64)
    y, u, v = yuv[:, 0], yuv[:, 1] - 128, yuv[:, 2] - 128
    r = y + 2 * (1 - KR) * v
    b = y + 2 * (1 - KB) * u
    g = (y - KR * r - KB * b) / KG
    rgb = np.clip(_round(np.stack([r, g, b], axis=1)), 0, 255).astype(np.uint8)
    return PointCloud(cloud.positions, rgb, cloud.normals, "RGB")


def _channel_index(channel):
    if channel not in CHANNELS:
        raise ValueError(f"channel must be one of {CHANNELS}")
    return CHANNELS.index(channel) - 1


def d_rms(a: PointCloud, b: PointCloud, channel: str = "geometry") -> float:
    """RMS over points of ``a`` of the error against their nearest neighbor in ``b``.

    Matching is always geometric; color channels measure the channel
    difference at the matched neighbor.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("d_rms needs nonempty clouds")
    ch = _channel_index(channel)
    nn = nearest_indices(b.positions, a.positions)
    if ch < 0:
        sq = squared_distances(a.positions, np.asarray(b.positions)[nn])
    else:
        if a.colors is None or b.colors is None:
            raise ValueError("color channels need colors on both clouds")
        diff = a.colors[:, ch].astype(np.float64) - b.colors[nn, ch].astype(np.float64)
        sq = diff * diff
    # np.sum uses pairwise summation, keeping the reduction order fixed
    return float(np.sqrt(np.sum(sq) / len(a)))


def d_s_rms(a: PointCloud, b: PointCloud, channel: str = "geometry") -> float:
    return max(d_rms(a, b, channel), d_rms(b, a, channel))


def peak_omega(cloud: PointCloud) -> float:
    pos = np.asarray(cloud.positions, dtype=np.float64)
    return float(np.max(pos.max(axis=0) - pos.min(axis=0)))


def psnr_from_distance(peak: float, dist: float) -> float:
    if dist == 0:
        return PSNR_CAP
    return float(10 * np.log10(peak ** 2 / dist ** 2))


def psnr_geometry(original: PointCloud, reconstructed: PointCloud) -> float:
    """Geometry PSNR with the largest axis extent of ``original`` as peak."""
    if len(original) == 0 or len(reconstructed) == 0:
        raise ValueError("psnr_geometry needs nonempty clouds")
    return psnr_from_distance(peak_omega(original), d_s_rms(original, reconstructed))


def psnr_color(original: PointCloud, reconstructed: PointCloud, channel: str = "Y") -> float:
    if original.colors is None or reconstructed.colors is None:
        raise ValueError("psnr_color needs colors on both clouds")
    return psnr_from_distance(255.0, d_s_rms(original, reconstructed, channel))


def evaluate(original: PointCloud, reconstructed: PointCloud) -> DistanceReport:
    """Full report; colors are compared in YUV, converting RGB clouds first."""
    ab = d_rms(original, reconstructed)
    ba = d_rms(reconstructed, original)
    ds = max(ab, ba)
    omega = peak_omega(original)
    psnr_c = {}
    if original.colors is not None and reconstructed.colors is not None:
        o = rgb_to_yuv(original) if original.color_space == "RGB" else original
        r = rgb_to_yuv(reconstructed) if reconstructed.color_space == "RGB" else reconstructed
        for ch in ("Y", "U", "V"):
            psnr_c[ch] = psnr_color(o, r, ch)
    return DistanceReport(ab, ba, ds, omega, psnr_from_distance(omega, ds), psnr_c)


# -- Bjontegaard deltas ------------------------------------------------------------

def _as_curve(curve):
    pts = [p if isinstance(p, RdPoint) else RdPoint(*p) for p in curve]
    if len(pts) < 4:
        raise ValueError("BD statistics need at least 4 points per curve")
    rate = np.array([p.rate for p in pts], dtype=np.float64)
    psnr = np.array([p.psnr for p in pts], dtype=np.float64)
    if not np.all(np.isfinite(psnr)):
        raise ValueError("PSNR values must be finite")
    order = np.argsort(rate)
    return np.log10(rate[order]), psnr[order]


def _integral(x, y, lo, hi, method):
    if method == "cubic":
        poly = np.polyint(np.polyfit(x, y, 3))
        return np.polyval(poly, hi) - np.polyval(poly, lo)
    order = np.argsort(x)
    return interpolate.PchipInterpolator(x[order], y[order]).integrate(lo, hi)


def bd_stats(curve_a, curve_b, method: str = "cubic"):
    """``(bd_psnr_dB, bd_rate_percent)`` of ``curve_b`` against reference ``curve_a``.

    ``method`` is ``"cubic"`` (third-order polynomial fits) or ``"pchip"``
    (piecewise cubic). Positive BD-PSNR / negative BD-rate favour ``curve_b``.
    """
    if method not in ("cubic", "pchip"):
        raise ValueError(f"unknown BD method {method!r}")
    ra, pa = _as_curve(curve_a)
    rb, pb = _as_curve(curve_b)

    lo, hi = max(ra.min(), rb.min()), min(ra.max(), rb.max())
    if not lo < hi:
        raise ValueError("rate ranges do not overlap")
    bd_psnr = (_integral(rb, pb, lo, hi, method) - _integral(ra, pa, lo, hi, method)) / (hi - lo)

    lo, hi = max(pa.min(), pb.min()), min(pa.max(), pb.max())
    if not lo < hi:
        raise ValueError("PSNR ranges do not overlap")
    avg = (_integral(pb, rb, lo, hi, method) - _integral(pa, ra, lo, hi, method)) / (hi - lo)
    bd_rate = (10 ** avg - 1) * 100
    return float(bd_psnr), float(bd_rate)
