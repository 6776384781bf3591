"""Attribute coding: re-coloring, LoD generation, predict/lifting transforms, RAHT."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .cloud import PointCloud
from .container import CorruptStreamError, pack_sections, unpack_sections
from .entropy import ArithmeticDecoder, ArithmeticEncoder, contexts
from .geometry import dequantize_positions, round_half_away
from .raht import raht_forward, raht_inverse, raht_tree
from .spatial import depth_for, k_nearest_batch, nearest_indices

ATTRIBUTE_MAGIC = b"GPCA"
ATTRIBUTE_VERSION = 1
CODERS = ("raht", "predict", "lifting")
DEFAULT_K = 3
DEFAULT_LODC = 8
_N_CTX = 24


# -- color transfer ------------------------------------------------------------------

def recolor(decoded_geom: PointCloud, original: PointCloud) -> PointCloud:
    """Give every decoded point the color of its nearest original point."""
    if original.colors is None:
        raise ValueError("original cloud has no colors")
    nn = nearest_indices(original.positions, decoded_geom.positions)
    return PointCloud(decoded_geom.positions, original.colors[nn], None, original.color_space)


def attribute_transfer(original: PointCloud, quantized_geom: PointCloud, scale: float = 1.0,
                       x_min=(0.0, 0.0, 0.0)) -> PointCloud:
    """Colors for quantized voxels, matched in the inverse-quantized frame."""
    if original.colors is None:
        raise ValueError("original cloud has no colors")
    world = dequantize_positions(quantized_geom.positions, scale, x_min)
    nn = nearest_indices(original.positions, world)
    return PointCloud(quantized_geom.positions, original.colors[nn], None, original.color_space)


# -- levels of detail ------------------------------------------------------------------

@dataclass
class LodPartition:
    """Refinement sets ``R_1..R_S`` grown from a seed point.

    ``level[i]`` is 0 for the seed and ``s`` for points of ``R_s``; the coding
    order is the seed followed by each refinement set in visit order.
    """

    thresholds: tuple
    seed: int
    refinements: list
    level: np.ndarray

    @property
    def n_levels(self) -> int:
        return len(self.refinements)

    @property
    def order(self) -> np.ndarray:
        return np.concatenate([[self.seed], *self.refinements]).astype(np.int64)

    def lod(self, s: int) -> np.ndarray:
        """Points of ``LoD_s``: the seed and ``R_1..R_s``."""
        return np.concatenate([[self.seed], *self.refinements[:s]]).astype(np.int64)


def check_thresholds(thresholds):
    t = [float(v) for v in thresholds]
    if not t:
        raise ValueError("need at least one LoD threshold")
    if t[-1] != 0:
        raise ValueError("the last LoD threshold must be 0")
    if any(b >= a for a, b in zip(t, t[1:])):
        raise ValueError("LoD thresholds must be strictly decreasing")
    return tuple(t)


def default_thresholds(positions, lodc: int = DEFAULT_LODC):
    """Halving ladder from an eighth of the bounding-cube side, ending at 0."""
    if lodc < 1:
        raise ValueError("lodc must be >= 1")
    pos = np.asarray(positions)
    side = 1 << depth_for(pos - pos.min(axis=0)) if len(pos) else 1
    first = max(side / 8.0, 1.0)
    return tuple(first / 2 ** s for s in range(lodc - 1)) + (0.0,)


def generate_lod(cloud, thresholds, initial: int = 0) -> LodPartition:
    """Distance-threshold subsampling in input order.

    At level ``s`` an unvisited point joins ``R_s`` (and the visited set)
    unless some visited point lies strictly closer than ``thresholds[s-1]``.
    """
    pos = np.asarray(cloud.positions if isinstance(cloud, PointCloud) else cloud, dtype=np.float64)
    thresholds = check_thresholds(thresholds)
    n = len(pos)
    if not 0 <= initial < n:
        raise ValueError("initial point index out of range")
    level = np.full(n, -1, dtype=np.int64)
    level[initial] = 0
    visited = [initial]
    pts = pos.tolist()
    refinements = []
    for s, dist in enumerate(thresholds, start=1):
        unvisited = np.nonzero(level < 0)[0]
        if dist == 0:
            added = unvisited
        else:
            d2 = dist * dist
            grid = {}
            for v in visited:
                p = pts[v]
                grid.setdefault((int(p[0] // dist), int(p[1] // dist), int(p[2] // dist)), []).append(p)
            added = []
            for i in unvisited.tolist():
                p = pts[i]
                cx, cy, cz = int(p[0] // dist), int(p[1] // dist), int(p[2] // dist)
                near = False
                for dx in (-1, 0, 1):
                    for dy in (-1, 0, 1):
                        for dz in (-1, 0, 1):
                            for q in grid.get((cx + dx, cy + dy, cz + dz), ()):
                                if (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2 < d2:
                                    near = True
                                    break
                            if near:
                                break
                        if near:
                            break
                    if near:
                        break
                if not near:
                    added.append(i)
                    grid.setdefault((cx, cy, cz), []).append(p)
            added = np.asarray(added, dtype=np.int64)
        level[added] = s
        visited.extend(added.tolist())
        refinements.append(added)
    return LodPartition(thresholds, initial, refinements, level)


# -- prediction neighborhoods ----------------------------------------------------------

@dataclass
class PredictorSet:
    """Per point of ``R_s``: up to ``k`` nearest neighbors in ``LoD_{s-1}``.

    ``neighbors`` rows are padded by repeating the first neighbor with weight 0.
    ``weights`` are the normalized inverse-squared-distance kernel; ``exact``
    keeps them as :class:`~fractions.Fraction`.
    """

    neighbors: np.ndarray
    distances: np.ndarray
    weights: np.ndarray
    k: int


def _kernel(d2_row, exact):
    """Normalized ``1/eta^2`` weights for one neighbor row of squared distances."""
    if exact:
        d2_row = [Fraction(v).limit_denominator(1 << 62) if not float(v).is_integer()
                  else Fraction(int(v)) for v in d2_row]
        zero = [v == 0 for v in d2_row]
        if any(zero):
            inv = [Fraction(1) if z else Fraction(0) for z in zero]
        else:
            inv = [1 / v for v in d2_row]
        total = sum(inv)
        return [v / total for v in inv]
    d2 = np.asarray(d2_row, dtype=np.float64)
    if np.any(d2 == 0):
        inv = (d2 == 0).astype(np.float64)
    else:
        inv = 1.0 / d2
    return (inv / inv.sum()).tolist()


def build_predictors(cloud, lod: LodPartition, k: int = DEFAULT_K, exact: bool = False) -> PredictorSet:
    pos = np.asarray(cloud.positions if isinstance(cloud, PointCloud) else cloud, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(pos)
    neighbors = np.zeros((n, k), dtype=np.int64)
    distances = np.zeros((n, k), dtype=np.float64)
    weights = np.zeros((n, k), dtype=object if exact else np.float64)
    if exact:
        weights[:] = Fraction(0)
    for s in range(1, lod.n_levels + 1):
        members = lod.refinements[s - 1]
        if len(members) == 0:
            continue
        ref = lod.lod(s - 1)
        idx, d2 = k_nearest_batch(pos[ref], pos[members], k)
        kk = idx.shape[1]
        idx = ref[idx]
        neighbors[members, :kk] = idx
        neighbors[members, kk:] = idx[:, :1]
        distances[members, :kk] = np.sqrt(d2)
        if exact:
            for r, i in enumerate(members.tolist()):
                weights[i, :kk] = _kernel(d2[r], True)
        else:
            zero = d2 == 0
            inv = np.where(zero.any(axis=1, keepdims=True), zero.astype(np.float64),
                           1.0 / np.where(zero, 1.0, d2))
            weights[members, :kk] = inv / inv.sum(axis=1, keepdims=True)
    return PredictorSet(neighbors, distances, weights, k)


def predict_value(neighbor_values, distances):
    """Inverse-squared-distance prediction, rounded half away from zero."""
    w = np.asarray(_kernel(np.asarray(distances, dtype=np.float64) ** 2, False))
    vals = np.asarray(neighbor_values, dtype=np.float64)
    return round_half_away(np.tensordot(w, vals, axes=(0, 0)))


# -- lifting ----------------------------------------------------------------------

def influence_weights(lod: LodPartition, preds: PredictorSet, exact: bool = False) -> np.ndarray:
    """Per-point influence weights, accumulated from the finest level down.

    Each influenced point ``phi`` adds ``zeta * w(phi)`` to every predictor
    point, ``zeta`` being the weight it gives that predictor.
    """
    n = len(lod.level)
    w = np.array([Fraction(1)] * n, dtype=object) if exact else np.ones(n)
    for s in range(lod.n_levels, 0, -1):
        members = lod.refinements[s - 1]
        if len(members) == 0:
            continue
        contrib = preds.weights[members] * w[members][:, None]
        np.add.at(w, preds.neighbors[members].ravel(), contrib.ravel())
    return w


def _update_terms(members, preds, w, resid, n):
    zw = preds.weights[members] * w[members][:, None]
    num = np.zeros((n, resid.shape[1]), dtype=resid.dtype)
    den = np.zeros(n, dtype=zw.dtype)
    if resid.dtype == object:
        num[:] = Fraction(0)
        den[:] = Fraction(0)
    flat = preds.neighbors[members].ravel()
    np.add.at(num, flat, (zw[:, :, None] * resid[:, None, :]).reshape(-1, resid.shape[1]))
    np.add.at(den, flat, zw.ravel())
    touched = np.nonzero(den != 0)[0]
    return touched, num[touched] / den[touched][:, None]


def lifting_forward(values, lod: LodPartition, preds: PredictorSet, weights) -> np.ndarray:
    """Residual per point (the seed keeps its updated value), from the finest level down."""
    a = np.array(values, dtype=object if preds.weights.dtype == object else np.float64)
    if a.ndim == 1:
        a = a[:, None]
    coeffs = np.zeros_like(a)
    n = len(a)
    for s in range(lod.n_levels, 0, -1):
        members = lod.refinements[s - 1]
        if len(members) == 0:
            continue
        pred = (preds.weights[members][:, :, None] * a[preds.neighbors[members]]).sum(axis=1)
        resid = a[members] - pred
        coeffs[members] = resid
        touched, upd = _update_terms(members, preds, weights, resid, n)
        a[touched] = a[touched] + upd
    coeffs[lod.seed] = a[lod.seed]
    return coeffs


def lifting_inverse(coeffs, lod: LodPartition, preds: PredictorSet, weights) -> np.ndarray:
    c = np.array(coeffs, dtype=object if preds.weights.dtype == object else np.float64)
    if c.ndim == 1:
        c = c[:, None]
    a = np.zeros_like(c)
    n = len(a)
    a[lod.seed] = c[lod.seed]
    for s in range(1, lod.n_levels + 1):
        members = lod.refinements[s - 1]
        if len(members) == 0:
            continue
        resid = c[members]
        touched, upd = _update_terms(members, preds, weights, resid, n)
        a[touched] = a[touched] - upd
        pred = (preds.weights[members][:, :, None] * a[preds.neighbors[members]]).sum(axis=1)
        a[members] = resid + pred
    return a


# -- coefficient coding ---------------------------------------------------------------

def _as_qsteps(qstep):
    if np.ndim(qstep) == 0:
        return (float(qstep),) * 3
    q = tuple(float(v) for v in qstep)
    if len(q) != 3:
        raise ValueError("qstep must be a scalar or one value per channel")
    if any(v < 0 for v in q):
        raise ValueError("qstep must be >= 0")
    return q


def _encode_ints(values):
    enc = ArithmeticEncoder()
    ctx = contexts(_N_CTX)
    for v in values:
        enc.encode_sint(ctx, v)
    return enc.flush()


def _decode_ints(data, n):
    dec = ArithmeticDecoder(data)
    ctx = contexts(_N_CTX)
    return [dec.decode_sint(ctx) for _ in range(n)]


_HEADER = struct.Struct("<BBIB3dBI")


@dataclass
class AttributeBitstream:
    coder: str
    n_points: int
    qsteps: tuple
    color_space: str = "YUV"
    k: int = DEFAULT_K
    thresholds: tuple = ()
    seed: int = 0
    channels: list = field(default_factory=list)

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(
            CODERS.index(self.coder), 0 if self.color_space == "RGB" else 1, self.n_points,
            self.k, *self.qsteps, len(self.thresholds), self.seed,
        )
        header += struct.pack(f"<{len(self.thresholds)}d", *self.thresholds)
        return pack_sections(ATTRIBUTE_MAGIC, ATTRIBUTE_VERSION, [header, *self.channels])

    @classmethod
    def from_bytes(cls, data: bytes) -> "AttributeBitstream":
        _, sections = unpack_sections(data, ATTRIBUTE_MAGIC, ATTRIBUTE_VERSION)
        if not sections or len(sections[0]) < _HEADER.size:
            raise CorruptStreamError("bad attribute header")
        h = _HEADER.unpack_from(sections[0])
        if h[0] >= len(CODERS):
            raise CorruptStreamError(f"unknown attribute coder {h[0]}")
        n_t = h[7]
        if len(sections[0]) != _HEADER.size + 8 * n_t or len(sections) != 4:
            raise CorruptStreamError("bad attribute section layout")
        thresholds = struct.unpack_from(f"<{n_t}d", sections[0], _HEADER.size)
        return cls(CODERS[h[0]], h[2], tuple(h[4:7]), "RGB" if h[1] == 0 else "YUV",
                   h[3], tuple(thresholds), h[8], list(sections[1:]))

    @property
    def n_bytes(self) -> int:
        return len(self.to_bytes())


def _lod_setup(positions, thresholds, k, exact=False):
    lod = generate_lod(positions, thresholds)
    preds = build_predictors(positions, lod, k, exact)
    return lod, preds


def _predict_pass(colors, positions, lod, preds, qsteps, residuals=None):
    """Shared encoder/decoder loop; pass ``residuals`` to decode."""
    n = len(positions)
    recon = np.zeros((n, 3), dtype=np.int64)
    decoding = residuals is not None
    out = np.zeros((n, 3), dtype=np.int64) if not decoding else None
    steps = np.array([q if q > 0 else 1.0 for q in qsteps])
    seed = lod.seed
    if decoding:
        recon[seed] = residuals[seed]
    else:
        recon[seed] = colors[seed]
        out[seed] = colors[seed]
    for s in range(1, lod.n_levels + 1):
        members = lod.refinements[s - 1]
        if len(members) == 0:
            continue
        w = preds.weights[members].astype(np.float64)
        pred = round_half_away((w[:, :, None] * recon[preds.neighbors[members]]).sum(axis=1))
        if decoding:
            q = residuals[members]
        else:
            q = round_half_away((colors[members] - pred) / steps).astype(np.int64)
            out[members] = q
        recon[members] = np.clip(pred + round_half_away(q * steps), 0, 255)
    return recon, out


def attribute_encode(cloud: PointCloud, coder: str = "raht", qstep=1.0, k: int = DEFAULT_K,
                     thresholds=None, lodc: int = DEFAULT_LODC) -> AttributeBitstream:
    """Code ``cloud.colors`` against ``cloud.positions`` (already decoded geometry).

    ``qstep == 0`` disables quantization: predict codes exact integer
    residuals, RAHT and lifting store float64 coefficients.
    """
    if coder not in CODERS:
        raise ValueError(f"coder must be one of {CODERS}")
    if cloud.colors is None:
        raise ValueError("cloud has no colors")
    qsteps = _as_qsteps(qstep)
    pos = np.asarray(cloud.positions)
    colors = cloud.colors.astype(np.int64)
    n = len(pos)
    stream = AttributeBitstream(coder, n, qsteps, cloud.color_space, k)
    if n == 0:
        stream.channels = [b"", b"", b""]
        return stream
    if coder == "raht":
        coeffs = raht_forward(raht_tree(pos), colors.astype(np.float64))
        stream.channels = [_code_float_channel(coeffs[:, c], qsteps[c], None) for c in range(3)]
        return stream

    stream.thresholds = check_thresholds(thresholds) if thresholds is not None else default_thresholds(pos, lodc)
    lod, preds = _lod_setup(pos, stream.thresholds, k)
    stream.seed = lod.seed
    order = lod.order
    if coder == "predict":
        _, q = _predict_pass(colors, pos, lod, preds, qsteps)
        chans = []
        for c in range(3):
            enc = ArithmeticEncoder()
            enc.encode_bits(int(q[lod.seed, c]), 8)
            ctx = contexts(_N_CTX)
            for v in q[order[1:], c].tolist():
                enc.encode_sint(ctx, v)
            chans.append(enc.flush())
        stream.channels = chans
        return stream

    weights = influence_weights(lod, preds)
    coeffs = lifting_forward(colors.astype(np.float64), lod, preds, weights)[order]
    scale = np.sqrt(weights[order])
    stream.channels = [_code_float_channel(coeffs[:, c], qsteps[c], scale) for c in range(3)]
    return stream


def _code_float_channel(coeffs, qstep, scale):
    if qstep == 0:
        return np.asarray(coeffs, dtype="<f8").tobytes()
    v = coeffs if scale is None else coeffs * scale
    return _encode_ints(round_half_away(v / qstep).astype(np.int64).tolist())


def _decode_float_channel(data, n, qstep, scale):
    if qstep == 0:
        if len(data) != 8 * n:
            raise CorruptStreamError("raw coefficient section has the wrong size")
        return np.frombuffer(data, dtype="<f8").astype(np.float64)
    v = np.asarray(_decode_ints(data, n), dtype=np.float64) * qstep
    return v if scale is None else v / scale


def attribute_decode(stream, decoded_geom: PointCloud) -> PointCloud:
    """Attach decoded colors to ``decoded_geom`` (same point order as at the encoder)."""
    if isinstance(stream, (bytes, bytearray)):
        stream = AttributeBitstream.from_bytes(bytes(stream))
    pos = np.asarray(decoded_geom.positions)
    n = len(pos)
    if n != stream.n_points:
        raise ValueError(f"geometry has {n} points, attribute stream expects {stream.n_points}")
    if n == 0:
        return PointCloud(pos, np.zeros((0, 3), np.uint8), None, stream.color_space)
    if stream.coder == "raht":
        coeffs = np.column_stack([_decode_float_channel(stream.channels[c], n, stream.qsteps[c], None)
                                  for c in range(3)])
        values = raht_inverse(raht_tree(pos), coeffs)
    else:
        lod, preds = _lod_setup(pos, stream.thresholds, stream.k)
        if lod.seed != stream.seed:
            raise CorruptStreamError("LoD seed mismatch")
        order = lod.order
        if stream.coder == "predict":
            q = np.zeros((n, 3), dtype=np.int64)
            for c in range(3):
                dec = ArithmeticDecoder(stream.channels[c])
                q[lod.seed, c] = dec.decode_bits(8)
                ctx = contexts(_N_CTX)
                q[order[1:], c] = [dec.decode_sint(ctx) for _ in range(n - 1)]
            values, _ = _predict_pass(None, pos, lod, preds, stream.qsteps, residuals=q)
        else:
            weights = influence_weights(lod, preds)
            scale = np.sqrt(weights[order])
            coeffs = np.zeros((n, 3))
            for c in range(3):
                coeffs[order, c] = _decode_float_channel(stream.channels[c], n, stream.qsteps[c], scale)
            values = lifting_inverse(coeffs, lod, preds, weights)
    colors = np.clip(round_half_away(np.asarray(values, dtype=np.float64)), 0, 255).astype(np.uint8)
    return PointCloud(pos, colors, None, stream.color_space)
