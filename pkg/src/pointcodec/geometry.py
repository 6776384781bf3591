"""Geometry coding: normalization, quantization, slicing, octree and trisoup."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud
from .container import CorruptStreamError, pack_sections, unpack_sections
from .entropy import ArithmeticDecoder, ArithmeticEncoder, BitReader, BitWriter, contexts
from .spatial import depth_for, morton_decode, morton_encode

GEOMETRY_MAGIC = b"GPCB"
GEOMETRY_VERSION = 1
MODES = ("lossless", "trisoup", "quantize-only")

_FACE_OFFSETS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.int64
)


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


# -- pre-processing ----------------------------------------------------------

@dataclass
class ConversionParams:
    translation: tuple = (0.0, 0.0, 0.0)
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be > 0")


def convert_coordinates(cloud: PointCloud, params: ConversionParams) -> PointCloud:
    """World to frame coordinates: ``(world - t) / alpha``."""
    pos = (np.asarray(cloud.positions, dtype=np.float64) - np.asarray(params.translation)) / params.scale
    return PointCloud(pos, cloud.colors, cloud.normals, cloud.color_space)


def invert_coordinates(cloud: PointCloud, params: ConversionParams) -> PointCloud:
    pos = np.asarray(cloud.positions, dtype=np.float64) * params.scale + np.asarray(params.translation)
    return PointCloud(pos, cloud.colors, cloud.normals, cloud.color_space)


@dataclass
class QuantizationParams:
    scale: float = 1.0
    x_min: tuple | None = None
    dedup: bool = True

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("quantization scale must be > 0")


def quantize_positions(cloud: PointCloud, params: QuantizationParams):
    """``Round((X - X_min) * q)`` per axis.

    Returns ``(quantized_cloud, inverse)`` where ``inverse[i]`` is the output
    index input point ``i`` landed on. With ``dedup`` output voxels are unique
    and keep the color of their lowest-index input.
    """
    pos = np.asarray(cloud.positions, dtype=np.float64)
    x_min = pos.min(axis=0) if params.x_min is None and len(pos) else np.asarray(
        params.x_min if params.x_min is not None else (0.0, 0.0, 0.0), dtype=np.float64)
    q = round_half_away((pos - x_min) * params.scale).astype(np.int64)
    if not params.dedup or len(q) == 0:
        return PointCloud(q, cloud.colors, None, cloud.color_space), np.arange(len(q))
    uniq, first, inverse = np.unique(q, axis=0, return_index=True, return_inverse=True)
    colors = None if cloud.colors is None else cloud.colors[first]
    return PointCloud(uniq, colors, None, cloud.color_space), inverse.reshape(-1)


def dequantize_positions(positions, scale: float, x_min) -> np.ndarray:
    return np.asarray(positions, dtype=np.float64) / scale + np.asarray(x_min, dtype=np.float64)


# -- slices --------------------------------------------------------------------

@dataclass
class Slice:
    indices: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    method: str


def partition_slices(cloud: PointCloud, method: str = "longest-edge", param=None) -> list:
    """Split a cloud into disjoint, exhaustive slices.

    ``longest-edge`` cuts along the longest axis every ``edge_min`` units
    (``param`` overrides the interval). ``octree`` groups points by their node
    at depth ``param`` of the power-of-two bounding cube.
    """
    pos = np.asarray(cloud.positions, dtype=np.float64)
    if len(pos) == 0:
        raise ValueError("cannot slice an empty cloud")
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    if method == "longest-edge":
        extent = hi - lo
        axis = int(np.argmax(extent))
        interval = float(param) if param is not None else float(extent.min())
        if interval <= 0 or extent[axis] <= interval:
            keys = np.zeros(len(pos), dtype=np.int64)
        else:
            n_slices = math.ceil(extent[axis] / interval)
            keys = np.minimum(np.floor((pos[:, axis] - lo[axis]) / interval), n_slices - 1).astype(np.int64)
    elif method == "octree":
        depth_partition = 1 if param is None else int(param)
        ipos = np.floor(pos - lo).astype(np.int64)
        n = depth_for(ipos)
        shift = max(n - depth_partition, 0)
        keys = morton_encode(ipos >> shift).astype(np.int64)
    else:
        raise ValueError(f"unknown slice method {method!r}")
    slices = []
    for key in np.unique(keys):
        idx = np.nonzero(keys == key)[0]
        sub = pos[idx]
        slices.append(Slice(idx, sub.min(axis=0), sub.max(axis=0), method))
    return slices


# -- bitstream -----------------------------------------------------------------

_HEADER = struct.Struct("<BBBBI3q3dd d3d")


@dataclass
class GeometryBitstream:
    mode: str
    depth: int
    level: int
    n_points: int
    origin: tuple = (0, 0, 0)
    dcm: bool = False
    translation: tuple = (0.0, 0.0, 0.0)
    alpha: float = 1.0
    q: float = 1.0
    x_min: tuple = (0.0, 0.0, 0.0)
    occupancy: bytes = b""
    dcm_points: bytes = b""
    trisoup: bytes = b""
    stats: dict = field(default_factory=dict, compare=False)

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(
            MODES.index(self.mode), self.depth, self.level, int(self.dcm), self.n_points,
            *map(int, self.origin), *map(float, self.translation), float(self.alpha),
            float(self.q), *map(float, self.x_min),
        )
        return pack_sections(GEOMETRY_MAGIC, GEOMETRY_VERSION,
                             [header, self.occupancy, self.dcm_points, self.trisoup])

    @classmethod
    def from_bytes(cls, data: bytes) -> "GeometryBitstream":
        _, sections = unpack_sections(data, GEOMETRY_MAGIC, GEOMETRY_VERSION)
        if len(sections) != 4 or len(sections[0]) != _HEADER.size:
            raise CorruptStreamError("bad geometry section layout")
        h = _HEADER.unpack(sections[0])
        if h[0] >= len(MODES):
            raise CorruptStreamError(f"unknown geometry mode {h[0]}")
        return cls(
            mode=MODES[h[0]], depth=h[1], level=h[2], dcm=bool(h[3]), n_points=h[4],
            origin=tuple(h[5:8]), translation=tuple(h[8:11]), alpha=h[11], q=h[12],
            x_min=tuple(h[13:16]), occupancy=sections[1], dcm_points=sections[2],
            trisoup=sections[3],
        )

    @property
    def n_bytes(self) -> int:
        return len(self.to_bytes())


# -- octree occupancy coding -----------------------------------------------------

def _popcount_bucket(bytes_):
    pop = np.unpackbits(np.asarray(bytes_, dtype=np.uint8)[:, None], axis=1).sum(axis=1)
    return np.select([pop <= 1, pop == 2, pop <= 4], [0, 1, 2], 3)


def _ctx_base(deep, bucket):
    # key layout: deep(2) x bucket(4) x bit(8) x siblings-set(8)
    return (deep * 4 + bucket) * 64


class _OccupancyCoder:
    """Bitwise occupancy-byte model shared by encoder and decoder."""

    def __init__(self):
        self.ctx = contexts(2 * 4 * 64)
        self.dcm_ctx = contexts(2)

    def encode_byte(self, enc, byte, base):
        nset = 0
        for bit in range(8):
            if bit == 7 and nset == 0:
                break  # a nonempty node has at least one child
            v = (byte >> bit) & 1
            enc.encode_bit(self.ctx[base + bit * 8 + nset], v)
            nset += v

    def decode_byte(self, dec, base):
        nset = 0
        byte = 0
        for bit in range(8):
            if bit == 7 and nset == 0:
                return byte | 0x80
            v = dec.decode_bit(self.ctx[base + bit * 8 + nset])
            byte |= v << bit
            nset += v
        return byte


def _isolated(nodes, level):
    """Nodes (sorted Morton codes at ``level``) with no occupied face neighbor."""
    coords = morton_decode(nodes)
    lim = 1 << level
    alone = np.ones(len(nodes), dtype=bool)
    for off in _FACE_OFFSETS:
        nb = coords + off
        ok = np.all((nb >= 0) & (nb < lim), axis=1)
        codes = morton_encode(np.where(ok[:, None], nb, 0))
        pos = np.searchsorted(nodes, codes)
        hit = (pos < len(nodes)) & (nodes[np.minimum(pos, len(nodes) - 1)] == codes) & ok
        alone &= ~hit
    return alone


def _level_contexts(depth, i, parent_bytes, parent_index):
    deep = 1 if depth - i <= 3 else 0
    bucket = _popcount_bucket(parent_bytes)[parent_index] if len(parent_bytes) else np.full(len(parent_index), 3)
    return [_ctx_base(deep, int(b)) for b in bucket]


def _encode_octree(codes, depth, level, dcm_enabled):
    """Code sorted unique leaf Morton ``codes`` down to ``level``.

    Returns ``(occupancy_bytes, dcm_bytes, node_codes, direct_codes, n_nodes)``.
    """
    enc = ArithmeticEncoder()
    model = _OccupancyCoder()
    dcm_out = BitWriter()
    pts = codes
    active = np.zeros(1, dtype=np.uint64)
    bases = [_ctx_base(1 if depth <= 3 else 0, 3)]
    direct_codes = []
    n_nodes = 0
    for i in range(level):
        if len(pts) == 0:
            break
        child = pts >> np.uint64(3 * (depth - i - 1))
        uchild, cstart = np.unique(child, return_index=True)
        parent = uchild >> np.uint64(3)
        bits = (np.uint64(1) << (uchild & np.uint64(7))).astype(np.uint8)
        pstart = np.r_[0, np.nonzero(np.diff(parent))[0] + 1]
        occ = np.bitwise_or.reduceat(bits, pstart)
        for byte, base in zip(occ.tolist(), bases):
            model.encode_byte(enc, byte, base)
        n_nodes += len(occ)

        nxt = i + 1
        if dcm_enabled and nxt < level:
            counts = np.diff(np.r_[cstart, len(child)])
            cand = np.nonzero(_isolated(uchild, nxt))[0]
            single = counts[cand] == 1
            for s in single.tolist():
                enc.encode_bit(model.dcm_ctx[0], s)
            direct = cand[single]
            if len(direct):
                rem = depth - nxt
                mask = (1 << rem) - 1
                for c in morton_decode(pts[cstart[direct]]).tolist():
                    for v in c:
                        dcm_out.write_bits(v & mask, rem)
                direct_codes.append(pts[cstart[direct]])
                keep = np.ones(len(uchild), dtype=bool)
                keep[direct] = False
                ptkeep = np.repeat(keep, np.diff(np.r_[cstart, len(child)]))
                pts = pts[ptkeep]
                uchild = uchild[keep]
                parent = parent[keep]
        pidx = np.searchsorted(active, parent)
        bases = _level_contexts(depth, nxt, occ, pidx)
        active = uchild
    direct_codes = np.concatenate(direct_codes) if direct_codes else np.zeros(0, np.uint64)
    return enc.flush(), dcm_out.getvalue(), active, direct_codes, n_nodes


def _decode_octree(data, dcm_data, depth, level, dcm_enabled):
    """Inverse of :func:`_encode_octree`; returns (node codes at ``level``, DCM points)."""
    dec = ArithmeticDecoder(data)
    model = _OccupancyCoder()
    reader = BitReader(dcm_data)
    active = np.zeros(1, dtype=np.uint64)
    bases = [_ctx_base(1 if depth <= 3 else 0, 3)]
    direct_pts = []
    for i in range(level):
        if len(active) == 0:
            break
        occ = np.array([model.decode_byte(dec, b) for b in bases], dtype=np.uint8)
        bits = np.unpackbits(occ[:, None], axis=1, bitorder="little")
        pi, ci = np.nonzero(bits)
        uchild = (active[pi] << np.uint64(3)) | ci.astype(np.uint64)
        parent_idx = pi
        nxt = i + 1
        if dcm_enabled and nxt < level:
            cand = np.nonzero(_isolated(uchild, nxt))[0]
            single = np.array([dec.decode_bit(model.dcm_ctx[0]) for _ in cand], dtype=bool)
            direct = cand[single] if len(cand) else cand
            if len(direct):
                rem = depth - nxt
                try:
                    for node in morton_decode(uchild[direct]).tolist():
                        low = [reader.read_bits(rem) for _ in range(3)]
                        direct_pts.append([(node[a] << rem) | low[a] for a in range(3)])
                except EOFError:
                    raise CorruptStreamError("truncated DCM section") from None
                keep = np.ones(len(uchild), dtype=bool)
                keep[direct] = False
                uchild = uchild[keep]
                parent_idx = parent_idx[keep]
        bases = _level_contexts(depth, nxt, occ, parent_idx)
        active = uchild
    dpts = np.array(direct_pts, dtype=np.int64).reshape(-1, 3)
    return active, dpts


def _check_voxels(cloud):
    pos = np.asarray(cloud.positions)
    if len(pos) and not np.issubdtype(pos.dtype, np.integer):
        if not np.all(np.mod(pos, 1) == 0):
            raise ValueError("geometry coding needs integer voxel positions (quantize first)")
    return pos.astype(np.int64)


def encode_geometry_lossless(cloud: PointCloud, dcm_enabled: bool = True, **header) -> GeometryBitstream:
    """Octree coding down to unit voxels, optionally with direct coding of isolated points."""
    pos = _check_voxels(cloud)
    if len(pos) and len(np.unique(pos, axis=0)) != len(pos):
        raise ValueError("lossless geometry coding needs unique positions (dedup first)")
    origin = pos.min(axis=0) if len(pos) else np.zeros(3, dtype=np.int64)
    rel = pos - origin
    depth = depth_for(rel)
    codes = np.sort(morton_encode(rel)) if len(rel) else np.zeros(0, np.uint64)
    occ, dcm_bytes, n_nodes = b"", b"", 0
    direct = np.zeros(0, np.uint64)
    if len(rel) and depth:
        occ, dcm_bytes, _, direct, n_nodes = _encode_octree(codes, depth, depth, dcm_enabled)
    header.setdefault("mode", "lossless")
    # decode_geometry returns Morton order, so callers can skip a decode pass
    recon = morton_decode(codes).astype(np.int64).reshape(-1, 3) + origin
    return GeometryBitstream(
        depth=depth, level=depth, n_points=len(pos), origin=tuple(int(v) for v in origin),
        dcm=dcm_enabled, occupancy=occ, dcm_points=dcm_bytes,
        stats={"dcm_points": len(direct), "nodes": n_nodes, "reconstruction": recon}, **header,
    )


# -- trisoup -----------------------------------------------------------------------

def _block_edges(blocks):
    """Twelve edges per block as rows ``(axis, cx, cy, cz)`` in block units."""
    rows = []
    for axis in range(3):
        b1, b2 = [a for a in range(3) if a != axis]
        for d1 in (0, 1):
            for d2 in (0, 1):
                corner = blocks.copy()
                corner[:, b1] += d1
                corner[:, b2] += d2
                rows.append(np.column_stack([np.full(len(blocks), axis), corner]))
    # shape (n_blocks, 12, 4)
    return np.stack(rows, axis=1)


def _edge_keys(rows, m):
    rows = rows.astype(np.int64)
    return ((rows[..., 0] * m + rows[..., 1]) * m + rows[..., 2]) * m + rows[..., 3]


def _trisoup_vertices(rel, s):
    """Mean position along each touched edge, keyed by edge key rows."""
    w = 1 << s
    block = rel >> s
    local = rel & (w - 1)
    keys, vals = [], []
    for axis in range(3):
        b1, b2 = [a for a in range(3) if a != axis]
        on1 = (local[:, b1] == 0) | (local[:, b1] == w - 1)
        on2 = (local[:, b2] == 0) | (local[:, b2] == w - 1)
        sel = on1 & on2
        corner = block[sel].copy()
        corner[:, b1] += local[sel, b1] == w - 1
        corner[:, b2] += local[sel, b2] == w - 1
        keys.append(np.column_stack([np.full(sel.sum(), axis), corner]))
        vals.append(local[sel, axis])
    return np.concatenate(keys), np.concatenate(vals).astype(np.float64)


def quantize_vertex(mean_local, s, bits=None):
    """Uniformly quantize a voxel-index mean along an edge of ``2**s`` voxels."""
    bits = s if bits is None else bits
    w = 1 << s
    rel = (np.asarray(mean_local, dtype=np.float64) + 0.5) / w
    return np.minimum(np.floor(rel * (1 << bits)), (1 << bits) - 1).astype(np.int64)


def dequantize_vertex(q, s, bits=None):
    """Geometric offset along the edge (voxel ``i`` spans ``[i, i+1)``)."""
    bits = s if bits is None else bits
    return (np.asarray(q, dtype=np.float64) + 0.5) * (1 << s) / (1 << bits)


def encode_geometry_trisoup(cloud: PointCloud, d: int | None = None, l: int | None = None,
                            dbodl: int | None = None, **header) -> GeometryBitstream:
    """Octree to level ``l`` plus per-edge surface vertices in each ``W = 2**(d-l)`` block.

    Pass either ``(d, l)`` or ``dbodl = d - l``; with ``dbodl`` the depth is
    derived from the cloud.
    """
    pos = np.unique(_check_voxels(cloud), axis=0)
    origin = pos.min(axis=0) if len(pos) else np.zeros(3, dtype=np.int64)
    rel = pos - origin
    if dbodl is not None:
        d = max(depth_for(rel), dbodl)
        l = d - dbodl
    if d is None or l is None:
        raise ValueError("trisoup needs (d, l) or dbodl")
    if l >= d:
        raise ValueError(f"trisoup needs l < d, got l={l}, d={d}")
    if len(rel) and rel.max() >= (1 << d):
        raise ValueError(f"positions exceed the 2^{d} cube")
    s = d - l
    codes = np.sort(morton_encode(rel)) if len(rel) else np.zeros(0, np.uint64)
    occ = b""
    payload = b""
    n_vertices = 0
    if len(rel):
        if l:
            occ = _encode_octree(codes, d, l, False)[0]
        blocks = np.unique(rel >> s, axis=0)
        m = (1 << l) + 2
        edge_rows = _block_edges(blocks)
        edge_keys = np.unique(_edge_keys(edge_rows, m))
        vkeys, vpos = _trisoup_vertices(rel, s)
        vk = _edge_keys(vkeys, m)
        uk, inv = np.unique(vk, return_inverse=True)
        means = np.bincount(inv.reshape(-1), weights=vpos) / np.bincount(inv.reshape(-1))
        present = np.isin(edge_keys, uk)
        qpos = quantize_vertex(means, s)
        enc = ArithmeticEncoder()
        flag_ctx = contexts(2)
        prev = 0
        j = 0
        for p in present.tolist():
            enc.encode_bit(flag_ctx[prev], p)
            prev = p
            if p:
                enc.encode_bits(int(qpos[j]), s)
                j += 1
        payload = enc.flush()
        n_vertices = int(present.sum())
    header.setdefault("mode", "trisoup")
    return GeometryBitstream(
        depth=d, level=l, n_points=len(pos), origin=tuple(int(v) for v in origin),
        occupancy=occ, trisoup=payload, stats={"vertices": n_vertices}, **header,
    )


def _order_ring(verts):
    """Order block-surface vertices around their dominant normal axis."""
    c = verts.mean(axis=0)
    cov = np.cov((verts - c).T) if len(verts) > 1 else np.eye(3)
    normal = np.linalg.eigh(cov)[1][:, 0]
    axis = int(np.argmax(np.abs(normal)))
    u, v = [a for a in range(3) if a != axis]
    ang = np.arctan2(verts[:, v] - c[v], verts[:, u] - c[u])
    return verts[np.argsort(ang, kind="stable")], c


def rasterize_triangle(tri, pitch: float = 1.0) -> np.ndarray:
    """Barycentric samples of a triangle, at most ``pitch`` apart along each side."""
    a, b, c = np.asarray(tri, dtype=np.float64)
    longest = max(np.linalg.norm(b - a), np.linalg.norm(c - a), np.linalg.norm(c - b))
    n = max(1, int(math.ceil(longest / pitch)))
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = (i + j) <= n
    i, j = i[keep] / n, j[keep] / n
    pts = a + i[:, None] * (b - a) + j[:, None] * (c - a)
    # convex combinations: clamp rounding spill to the vertices' box
    tri = np.stack([a, b, c])
    return np.clip(pts, tri.min(axis=0), tri.max(axis=0))


def triangulate_block(verts):
    """Triangles for one block: a single triangle for three vertices, else a centroid fan."""
    if len(verts) < 3:
        return []
    if len(verts) == 3:
        return [verts]
    ring, c = _order_ring(verts)
    return [np.stack([c, ring[k], ring[(k + 1) % len(ring)]]) for k in range(len(ring))]


def _decode_trisoup(stream, blocks):
    s = stream.depth - stream.level
    w = 1 << s
    m = (1 << stream.level) + 2
    edge_rows = _block_edges(blocks)
    flat = _edge_keys(edge_rows, m)
    edge_keys, inv = np.unique(flat, return_inverse=True)
    inv = inv.reshape(flat.shape)
    dec = ArithmeticDecoder(stream.trisoup)
    flag_ctx = contexts(2)
    present = np.zeros(len(edge_keys), dtype=bool)
    qpos = np.zeros(len(edge_keys), dtype=np.int64)
    prev = 0
    for e in range(len(edge_keys)):
        p = dec.decode_bit(flag_ctx[prev])
        prev = p
        if p:
            present[e] = True
            qpos[e] = dec.decode_bits(s)
    # global geometric vertex per edge
    rows = np.empty((len(edge_keys), 4), dtype=np.int64)
    rows[inv.reshape(-1)] = edge_rows.reshape(-1, 4)
    vert = rows[:, 1:].astype(np.float64) * w
    vert[np.arange(len(rows)), rows[:, 0]] += dequantize_vertex(qpos, s)

    out = []
    for bi, blk in enumerate(blocks):
        eids = inv[bi][present[inv[bi]]]
        if len(eids) == 0:
            continue
        base = blk * w
        verts = vert[eids] - base
        tris = triangulate_block(verts)
        if tris:
            samples = np.concatenate([rasterize_triangle(t) for t in tris])
        elif len(verts) == 2:
            samples = rasterize_triangle(np.stack([verts[0], verts[1], verts[1]]))
        else:
            samples = verts
        vox = np.clip(np.floor(samples).astype(np.int64), 0, w - 1) + base
        out.append(vox)
    if not out:
        return np.zeros((0, 3), dtype=np.int64)
    return np.unique(np.concatenate(out), axis=0)


def decode_geometry(stream) -> PointCloud:
    """Decode to voxel positions (in the coded frame, origin restored), Morton order."""
    if isinstance(stream, (bytes, bytearray)):
        stream = GeometryBitstream.from_bytes(bytes(stream))
    origin = np.asarray(stream.origin, dtype=np.int64)
    if stream.n_points == 0:
        return PointCloud(np.zeros((0, 3), dtype=np.int64))
    try:
        if stream.mode in ("lossless", "quantize-only"):
            if stream.depth == 0:
                pos = np.zeros((1, 3), dtype=np.int64)
            else:
                nodes, direct = _decode_octree(stream.occupancy, stream.dcm_points,
                                               stream.depth, stream.depth, stream.dcm)
                pos = np.concatenate([morton_decode(nodes), direct])
            if len(pos) != stream.n_points:
                raise CorruptStreamError(f"decoded {len(pos)} points, header says {stream.n_points}")
        else:
            if stream.level:
                nodes, _ = _decode_octree(stream.occupancy, b"", stream.depth, stream.level, False)
            else:
                nodes = np.zeros(1, dtype=np.uint64)
            pos = _decode_trisoup(stream, morton_decode(nodes))
    except (IndexError, ValueError) as exc:
        if isinstance(exc, CorruptStreamError):
            raise
        raise CorruptStreamError(f"corrupt geometry stream: {exc}") from exc
    pos = pos[np.argsort(morton_encode(pos), kind="stable")]
    return PointCloud(pos + origin)
