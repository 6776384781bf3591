"""Projection-based coding: normals, six-plane patches, 2D packing, padded images."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .cloud import PointCloud
from .container import CorruptStreamError, pack_sections, unpack_sections
from .geometry import round_half_away
from .spatial import KdTree

# +X, -X, +Y, -Y, +Z, -Z
PLANE_NAMES = ("+X", "-X", "+Y", "-Y", "+Z", "-Z")
PLANE_DIRS = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.float64)

DEFAULT_DELTA = 4
BLOCK = 16
SUB_BLOCK = 4
GRID_WIDTH = 1280
PAD_ITERATIONS = 16
FRAME_MAGIC = b"VPCF"
FRAME_VERSION = 1

_OFFSETS26 = np.array([(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
                       if (dx, dy, dz) != (0, 0, 0)], dtype=np.int64)


# -- normals and clustering ------------------------------------------------------------

def estimate_normals(cloud, k: int = 16) -> np.ndarray:
    """Unit normals from the smallest-eigenvalue eigenvector of each k-NN covariance.

    Normals point away from the cloud centroid; when a normal is orthogonal
    to that direction its largest component is made positive instead.
    """
    if k < 3:
        raise ValueError("k must be >= 3")
    pos = np.asarray(cloud.positions if isinstance(cloud, PointCloud) else cloud, dtype=np.float64)
    if len(pos) == 0:
        return np.zeros((0, 3))
    idx, _ = KdTree(pos).query_many(pos, k)
    nb = pos[idx]
    nb = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb)
    # eigh sorts eigenvalues ascending; for collinear neighborhoods column 0 is still
    # orthogonal to the dominant direction
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    out = pos - pos.mean(axis=0)
    side = np.einsum("ij,ij->i", normals, out)
    tol = 1e-9 * (np.linalg.norm(out, axis=1) + 1.0)
    big = normals[np.arange(len(normals)), np.argmax(np.abs(normals), axis=1)]
    flip = np.where(np.abs(side) > tol, side < 0, big < 0)
    normals[flip] *= -1
    return normals


def cluster_to_planes(normals) -> np.ndarray:
    """Index into :data:`PLANE_NAMES` maximizing the dot product; first wins on ties."""
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    return np.argmax(n @ PLANE_DIRS.T, axis=1).astype(np.int64)


# -- patches -----------------------------------------------------------------------

def plane_axes(plane: int):
    """``(depth_axis, u_axis, v_axis, sign)``; depth grows away from the viewer."""
    axis = plane // 2
    u, v = [a for a in range(3) if a != axis]
    return axis, u, v, -1 if plane % 2 == 0 else 1


@dataclass
class Patch:
    """One connected cluster projected onto its plane.

    ``near`` / ``far`` hold depths relative to ``d_min`` (-1 where empty); the 3D
    coordinate along the depth axis is ``sign * (depth + d_min)``.
    """

    plane: int
    u_min: int
    v_min: int
    d_min: int
    near: np.ndarray
    far: np.ndarray
    near_index: np.ndarray
    far_index: np.ndarray
    u0: int = 0
    v0: int = 0

    @property
    def height(self) -> int:
        return self.near.shape[0]

    @property
    def width(self) -> int:
        return self.near.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return self.near >= 0

    @property
    def area(self) -> int:
        return self.width * self.height


def _components(pos):
    """26-connected component label per voxel."""
    n = len(pos)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    base = pos - pos.min(axis=0) + 1
    span = int(base.max()) + 2
    key = (base[:, 0] * span + base[:, 1]) * span + base[:, 2]
    order = np.argsort(key)
    skey = key[order]
    rows, cols = [], []
    for off in _OFFSETS26:
        nk = key + (off[0] * span + off[1]) * span + off[2]
        j = np.searchsorted(skey, nk)
        j = np.minimum(j, n - 1)
        hit = skey[j] == nk
        rows.append(np.nonzero(hit)[0])
        cols.append(order[j[hit]])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    graph = coo_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return labels


def _project(pos, idx, plane, delta):
    axis, ua, va, sign = plane_axes(plane)
    p = pos[idx]
    d = sign * p[:, axis]
    d_min = int(d.min())
    d = d - d_min
    u_min, v_min = int(p[:, ua].min()), int(p[:, va].min())
    u = p[:, ua] - u_min
    v = p[:, va] - v_min
    h, w = int(v.max()) + 1, int(u.max()) + 1
    near = np.full((h, w), -1, dtype=np.int64)
    far = np.full((h, w), -1, dtype=np.int64)
    near_index = np.full((h, w), -1, dtype=np.int64)
    far_index = np.full((h, w), -1, dtype=np.int64)
    # nearest point per pixel: sort by (pixel, depth) and take the first
    order = np.lexsort((d, u, v))
    pix = v[order] * w + u[order]
    first = np.r_[True, pix[1:] != pix[:-1]]
    near.flat[pix[first]] = d[order][first]
    near_index.flat[pix[first]] = idx[order][first]
    # farthest point within delta of the near layer
    within = d[order] <= near.flat[pix] + delta
    sel = order[within]
    pix_w = pix[within]
    last = np.r_[pix_w[1:] != pix_w[:-1], True]
    far.flat[pix_w[last]] = d[sel][last]
    far_index.flat[pix_w[last]] = idx[sel][last]
    return Patch(plane, u_min, v_min, d_min, near, far, near_index, far_index)


def extract_patches(cloud, labels, delta: int = DEFAULT_DELTA, max_rounds: int = 1) -> list:
    """Connected components per plane label, each projected to near/far layers.

    With ``max_rounds > 1`` points captured by neither layer are clustered
    again into further patches, up to that many rounds.
    """
    pos = np.asarray(cloud.positions if isinstance(cloud, PointCloud) else cloud)
    if len(pos) and not np.issubdtype(pos.dtype, np.integer):
        raise ValueError("patch extraction needs integer voxel positions")
    pos = pos.astype(np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(pos),):
        raise ValueError("one label per point is required")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    patches = []
    remaining = np.arange(len(pos))
    for _ in range(max_rounds):
        if len(remaining) == 0:
            break
        for plane in range(6):
            members = remaining[labels[remaining] == plane]
            if len(members) == 0:
                continue
            comp = _components(pos[members])
            for c in range(comp.max() + 1):
                patches.append(_project(pos, members[comp == c], plane, delta))
        captured = np.zeros(len(pos), dtype=bool)
        for p in patches:
            captured[p.near_index[p.near_index >= 0]] = True
            captured[p.far_index[p.far_index >= 0]] = True
        remaining = np.nonzero(~captured)[0]
    return patches


# -- packing and occupancy -------------------------------------------------------------

@dataclass
class ProjectedFrames:
    width: int
    height: int
    patches: list
    occupancy: np.ndarray       # (H, W) bool, real pixels only
    patch_map: np.ndarray       # (H, W) patch index or -1
    near: np.ndarray            # (H, W) depth
    far: np.ndarray             # (H, W) far - near
    texture_near: Optional[np.ndarray] = None
    texture_far: Optional[np.ndarray] = None
    delta: int = DEFAULT_DELTA
    color_space: str = "RGB"


def _first_free(grid, bh, bw):
    rows, cols = grid.shape
    if bh > rows or bw > cols:
        return None
    s = np.zeros((rows + 1, cols + 1), dtype=np.int64)
    s[1:, 1:] = grid.cumsum(0).cumsum(1)
    win = s[bh:, bw:] - s[:-bh, bw:] - s[bh:, :-bw] + s[:-bh, :-bw]
    free = np.flatnonzero(win == 0)
    if len(free) == 0:
        return None
    return divmod(int(free[0]), win.shape[1])


def pack_patches(patches, width: int = GRID_WIDTH, block: int = BLOCK) -> tuple:
    """Place patches largest-first at the first free block-aligned raster position.

    Sets ``u0``/``v0`` on every patch and returns the grid ``(width, height)``
    in pixels; the height grows as needed and the width only when a single
    patch is wider than the grid.
    """
    cols = max(-(-width // block), max((-(-p.width // block) for p in patches), default=1))
    grid = np.zeros((1, cols), dtype=bool)
    order = sorted(range(len(patches)), key=lambda i: -patches[i].area)
    for i in order:
        p = patches[i]
        bh, bw = -(-p.height // block), -(-p.width // block)
        spot = _first_free(grid, bh, bw)
        while spot is None:
            grid = np.vstack([grid, np.zeros((bh, cols), dtype=bool)])
            spot = _first_free(grid, bh, bw)
        r, c = spot
        grid[r:r + bh, c:c + bw] = True
        p.v0, p.u0 = r * block, c * block
    used = np.nonzero(grid.any(axis=1))[0]
    rows = int(used[-1]) + 1 if len(used) else 1
    return cols * block, rows * block


def project_frames(cloud: PointCloud, patches, width: int = GRID_WIDTH, delta: int = DEFAULT_DELTA) -> ProjectedFrames:
    """Pack ``patches`` and render their depth and texture images."""
    W, H = pack_patches(patches, width)
    occ = np.zeros((H, W), dtype=bool)
    pmap = np.full((H, W), -1, dtype=np.int64)
    near = np.zeros((H, W), dtype=np.int64)
    far = np.zeros((H, W), dtype=np.int64)
    colors = cloud.colors
    tex_n = np.zeros((H, W, 3), dtype=np.uint8) if colors is not None else None
    tex_f = np.zeros((H, W, 3), dtype=np.uint8) if colors is not None else None
    for i, p in enumerate(patches):
        m = p.mask
        sl = (slice(p.v0, p.v0 + p.height), slice(p.u0, p.u0 + p.width))
        if np.any(occ[sl] & m):
            raise RuntimeError("patches overlap")
        occ[sl] |= m
        pmap[sl][m] = i
        near[sl][m] = p.near[m]
        far[sl][m] = p.far[m] - p.near[m]
        if colors is not None:
            tex_n[sl][m] = colors[p.near_index[m]]
            tex_f[sl][m] = colors[p.far_index[m]]
    return ProjectedFrames(W, H, list(patches), occ, pmap, near, far, tex_n, tex_f, delta, cloud.color_space)


@dataclass
class OccupancyMap:
    width: int
    height: int
    block: int
    sub_block: int
    sub_flags: np.ndarray
    block_flags: np.ndarray

    def check(self, occupancy) -> bool:
        """Both flag invariants against a pixel occupancy mask."""
        h = self.sub_block
        occ = np.asarray(occupancy, dtype=bool)
        sub = occ.reshape(self.height // h, h, self.width // h, h).any(axis=(1, 3))
        r = self.block // h
        full = sub.reshape(self.height // self.block, r, self.width // self.block, r).all(axis=(1, 3))
        return bool(np.array_equal(sub, self.sub_flags) and np.array_equal(full, self.block_flags))


def build_occupancy_map(frames, h: int = SUB_BLOCK, block: int = BLOCK) -> OccupancyMap:
    occ = np.asarray(frames.occupancy if isinstance(frames, ProjectedFrames) else frames, dtype=bool)
    H, W = occ.shape
    if block % h or H % block or W % block:
        raise ValueError("grid must be a multiple of the block size, block a multiple of h")
    sub = occ.reshape(H // h, h, W // h, h).any(axis=(1, 3))
    r = block // h
    full = sub.reshape(H // block, r, W // block, r).all(axis=(1, 3))
    return OccupancyMap(W, H, block, h, sub, full)


def pad_image(image, occupancy, iterations: int = PAD_ITERATIONS) -> np.ndarray:
    """Fill empty pixels by repeated 4-neighbor averaging of already-filled pixels.

    Each iteration fills every empty pixel that touches a filled one (double
    buffered); pixels still empty afterwards take the mean of occupied pixels.
    """
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    img = img.copy()
    filled = np.asarray(occupancy, dtype=bool).copy()
    if not filled.any():
        out = np.zeros_like(img)
        return out[:, :, 0] if squeeze else out
    if not filled.all():
        for _ in range(iterations):
            f = filled.astype(np.float64)
            val = img * f[:, :, None]
            acc = np.zeros_like(img)
            cnt = np.zeros_like(f)
            acc[1:] += val[:-1]
            cnt[1:] += f[:-1]
            acc[:-1] += val[1:]
            cnt[:-1] += f[1:]
            acc[:, 1:] += val[:, :-1]
            cnt[:, 1:] += f[:, :-1]
            acc[:, :-1] += val[:, 1:]
            cnt[:, :-1] += f[:, 1:]
            grow = ~filled & (cnt > 0)
            if not grow.any():
                break
            img[grow] = acc[grow] / cnt[grow][:, None]
            filled |= grow
        occ = np.asarray(occupancy, dtype=bool)
        img[~filled] = img[occ].mean(axis=0)
    return img[:, :, 0] if squeeze else img


def pad_images(frames: ProjectedFrames) -> ProjectedFrames:
    occ = frames.occupancy

    def pad(im):
        if im is None:
            return None
        return round_half_away(pad_image(im, occ)).astype(im.dtype)

    return ProjectedFrames(frames.width, frames.height, frames.patches, occ, frames.patch_map,
                           pad(frames.near), pad(frames.far), pad(frames.texture_near),
                           pad(frames.texture_far), frames.delta, frames.color_space)


# -- image codec -----------------------------------------------------------------------

class ZlibImageCodec:
    """Reference 2D codec: uniform scalar quantization followed by deflate.

    ``qstep <= 1`` is lossless for integer planes.
    """

    _HEAD = struct.Struct("<IIBBd")

    def encode(self, plane, qstep: float = 1.0) -> bytes:
        img = np.asarray(plane)
        if img.ndim == 2:
            img = img[:, :, None]
        h, w, c = img.shape
        q = np.asarray(img, dtype=np.float64)
        if qstep > 1:
            q = round_half_away(q / qstep)
        q = q.astype(np.int64)
        if q.size and (q.min() < 0 or q.max() > 0xFFFF):
            raise ValueError("image samples must fit in 16 bits after quantization")
        wide = q.size and q.max() > 0xFF
        payload = q.astype("<u2" if wide else np.uint8).tobytes()
        return self._HEAD.pack(h, w, c, 2 if wide else 1, float(max(qstep, 1.0))) + zlib.compress(payload, 9)

    def decode(self, data: bytes) -> np.ndarray:
        if len(data) < self._HEAD.size:
            raise CorruptStreamError("truncated image")
        h, w, c, nbytes, qstep = self._HEAD.unpack_from(data)
        try:
            raw = zlib.decompress(data[self._HEAD.size:])
        except zlib.error as exc:
            raise CorruptStreamError(f"bad image payload: {exc}") from exc
        if nbytes not in (1, 2) or len(raw) != h * w * c * nbytes:
            raise CorruptStreamError("image payload size mismatch")
        q = np.frombuffer(raw, dtype="<u2" if nbytes == 2 else np.uint8).astype(np.int64)
        img = q.reshape(h, w, c)
        if qstep > 1:
            img = round_half_away(img * qstep).astype(np.int64)
        return img


# -- frame container -------------------------------------------------------------------

_FRAME_HEAD = struct.Struct("<IIIBBB")
_PATCH = struct.Struct("<BIIIIiii")


@dataclass
class VpccParams:
    delta: int = DEFAULT_DELTA
    k: int = 16
    width: int = GRID_WIDTH
    geometry_qstep: float = 1.0
    texture_qstep: float = 1.0
    max_rounds: int = 8
    codec: object = field(default_factory=ZlibImageCodec)


def vpcc_encode(cloud: PointCloud, params: VpccParams | None = None) -> bytes:
    """Project, pack, pad and code ``cloud``; integer voxel positions required."""
    params = params or VpccParams()
    pos = np.asarray(cloud.positions)
    if len(pos) and not np.issubdtype(pos.dtype, np.integer):
        raise ValueError("V-PCC coding needs integer voxel positions")
    if len(pos) < 3:
        raise ValueError("V-PCC coding needs at least 3 points")
    normals = estimate_normals(cloud, min(params.k, len(pos)))
    labels = cluster_to_planes(normals)
    patches = extract_patches(cloud, labels, params.delta, params.max_rounds)
    frames = pad_images(project_frames(cloud, patches, params.width, params.delta))
    return encode_frames(frames, params)


def encode_frames(frames: ProjectedFrames, params: VpccParams) -> bytes:
    codec = params.codec
    has_tex = frames.texture_near is not None
    head = _FRAME_HEAD.pack(frames.width, frames.height, len(frames.patches), frames.delta,
                            int(has_tex), 0 if frames.color_space == "RGB" else 1)
    table = b"".join(_PATCH.pack(p.plane, p.u0, p.v0, p.width, p.height, p.u_min, p.v_min, p.d_min)
                     for p in frames.patches)
    occ = np.packbits(frames.occupancy.ravel()).tobytes()
    sections = [head, table, occ,
                codec.encode(frames.near, params.geometry_qstep),
                codec.encode(frames.far, 1.0)]
    if has_tex:
        sections.append(codec.encode(frames.texture_near, params.texture_qstep))
        sections.append(codec.encode(frames.texture_far, params.texture_qstep))
    return pack_sections(FRAME_MAGIC, FRAME_VERSION, sections)


def reconstruct_cloud(data: bytes, codec=None) -> PointCloud:
    """Re-emit one point per occupied pixel (plus a far point where it differs)."""
    codec = codec or ZlibImageCodec()
    _, sec = unpack_sections(data, FRAME_MAGIC, FRAME_VERSION)
    if len(sec) < 5 or len(sec[0]) != _FRAME_HEAD.size:
        raise CorruptStreamError("bad frame header")
    W, H, n_patches, delta, has_tex, cs = _FRAME_HEAD.unpack(sec[0])
    if len(sec) != (7 if has_tex else 5) or len(sec[1]) != n_patches * _PATCH.size:
        raise CorruptStreamError("frame section layout mismatch")
    occ = np.unpackbits(np.frombuffer(sec[2], dtype=np.uint8), count=W * H).reshape(H, W).astype(bool)
    near = codec.decode(sec[3])[:, :, 0]
    far = codec.decode(sec[4])[:, :, 0]
    tex_n = codec.decode(sec[5]) if has_tex else None
    tex_f = codec.decode(sec[6]) if has_tex else None
    if near.shape != (H, W) or far.shape != (H, W):
        raise CorruptStreamError("image size does not match the occupancy map")

    positions, colors = [], []
    for j in range(n_patches):
        plane, u0, v0, w, h, u_min, v_min, d_min = _PATCH.unpack_from(sec[1], j * _PATCH.size)
        if plane > 5 or u0 + w > W or v0 + h > H:
            raise CorruptStreamError("patch outside the grid")
        axis, ua, va, sign = plane_axes(plane)
        sl = (slice(v0, v0 + h), slice(u0, u0 + w))
        vv, uu = np.nonzero(occ[sl])
        d0 = near[sl][vv, uu]
        d1 = d0 + np.clip(far[sl][vv, uu], 0, delta)
        for depth, tex, keep in ((d0, tex_n, None), (d1, tex_f, d1 != d0)):
            p = np.zeros((len(vv), 3), dtype=np.int64)
            p[:, axis] = sign * (depth + d_min)
            p[:, ua] = uu + u_min
            p[:, va] = vv + v_min
            c = tex[sl][vv, uu] if tex is not None else None
            if keep is not None:
                p = p[keep]
                c = c[keep] if c is not None else None
            positions.append(p)
            if c is not None:
                colors.append(c)
    pos = np.concatenate(positions) if positions else np.zeros((0, 3), dtype=np.int64)
    col = None
    if has_tex:
        col = np.clip(np.concatenate(colors), 0, 255) if colors else np.zeros((0, 3))
    return PointCloud(pos, col, None, "RGB" if cs == 0 else "YUV")


def vpcc_decode(data: bytes, codec=None) -> PointCloud:
    return reconstruct_cloud(data, codec)
