"""Bounding cubes, octree decomposition and a k-d tree with exact k-NN search."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, check_positions

MAX_DEPTH = 21  # 3 * 21 bits fit in a uint64 Morton code


def squared_distances(a, b) -> np.ndarray:
    """Squared Euclidean distance over the last axis, summed left to right.

    The fixed order makes every search path return bit-identical distances.
    """
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    out = d[..., 0] * d[..., 0]
    for j in range(1, d.shape[-1]):
        out = out + d[..., j] * d[..., j]
    return out


@dataclass
class BoundingBox:
    min: np.ndarray
    max: np.ndarray
    cube_log2: int

    @property
    def side(self) -> int:
        return 1 << self.cube_log2


def bounding_cube(cloud) -> BoundingBox:
    """Smallest ``n`` with ``2**n >= max coordinate`` over non-negative voxels."""
    pos = cloud.positions if isinstance(cloud, PointCloud) else np.asarray(cloud)
    if len(pos) == 0:
        raise ValueError("bounding_cube of an empty cloud")
    if pos.min() < 0:
        raise ValueError("positions must be non-negative")
    m = float(pos.max())
    n = 0
    while (1 << n) < m:
        n += 1
    side = 1 << n
    return BoundingBox(np.zeros(3), np.full(3, float(side)), n)


def depth_for(positions) -> int:
    """Octree depth able to address every voxel, i.e. ``2**d > max coordinate``."""
    if len(positions) == 0:
        return 0
    return int(int(np.max(positions)).bit_length())


# -- Morton codes ----------------------------------------------------------

def morton_encode(positions: np.ndarray) -> np.ndarray:
    """Interleave bits so that each 3-bit group is ``4*x + 2*y + z``."""
    p = np.asarray(positions, dtype=np.uint64)
    code = np.zeros(len(p), dtype=np.uint64)
    one = np.uint64(1)
    for b in range(MAX_DEPTH):
        sb = np.uint64(b)
        for axis, shift in ((0, 2), (1, 1), (2, 0)):
            bit = (p[:, axis] >> sb) & one
            code |= bit << np.uint64(3 * b + shift)
    return code


def morton_decode(codes: np.ndarray) -> np.ndarray:
    c = np.asarray(codes, dtype=np.uint64)
    out = np.zeros((len(c), 3), dtype=np.uint64)
    one = np.uint64(1)
    for b in range(MAX_DEPTH):
        for axis, shift in ((0, 2), (1, 1), (2, 0)):
            bit = (c >> np.uint64(3 * b + shift)) & one
            out[:, axis] |= bit << np.uint64(b)
    return out.astype(np.int64)


# -- Octree ----------------------------------------------------------------

@dataclass
class OctreeCursor:
    """Breadth-first octree down to ``level`` of a depth-``depth`` cube.

    ``nodes[i]`` holds Morton codes of the occupied nodes at level ``i``
    (root is level 0) and ``occupancy[i]`` their child-occupancy bytes.
    """

    depth: int
    level: int
    nodes: list = field(default_factory=list)
    occupancy: list = field(default_factory=list)

    def voxel_side(self, level=None) -> int:
        return 1 << (self.depth - (self.level if level is None else level))

    def byte_stream(self) -> np.ndarray:
        if not self.occupancy:
            return np.zeros(0, dtype=np.uint8)
        return np.concatenate(self.occupancy).astype(np.uint8)

    def leaves(self) -> np.ndarray:
        """Occupied nodes at the last level, as integer node coordinates."""
        codes = self.nodes[self.level] if len(self.nodes) > self.level else np.zeros(0, np.uint64)
        return morton_decode(codes)


def octree_decompose(cloud, depth: int, level: int | None = None) -> OctreeCursor:
    pos = cloud.positions if isinstance(cloud, PointCloud) else np.asarray(cloud)
    level = depth if level is None else level
    if len(pos) and (pos.min() < 0 or pos.max() >= (1 << depth)):
        raise ValueError(f"point outside the 2^{depth} cube")
    codes = np.unique(morton_encode(pos)) if len(pos) else np.zeros(0, np.uint64)
    cursor = OctreeCursor(depth, level)
    for i in range(level + 1):
        node_codes = codes >> np.uint64(3 * (depth - i))
        uniq, start = np.unique(node_codes, return_index=True)
        cursor.nodes.append(uniq)
        if i == level:
            break
        child = (codes >> np.uint64(3 * (depth - i - 1))) & np.uint64(7)
        bits = (np.uint64(1) << child).astype(np.uint8)
        cursor.occupancy.append(np.bitwise_or.reduceat(bits, start) if len(bits) else bits)
    return cursor


def octree_from_bytes(byte_levels, depth: int, level: int | None = None) -> OctreeCursor:
    """Rebuild a cursor from per-level occupancy bytes (root first)."""
    level = depth if level is None else level
    cursor = OctreeCursor(depth, level, [np.zeros(1, np.uint64)], [])
    for i in range(level):
        occ = np.asarray(byte_levels[i], dtype=np.uint8)
        cursor.occupancy.append(occ)
        parents = cursor.nodes[-1]
        bits = np.unpackbits(occ[:, None], axis=1, bitorder="little")
        pi, ci = np.nonzero(bits)
        cursor.nodes.append((parents[pi] << np.uint64(3)) | ci.astype(np.uint64))
    return cursor


# -- k-d tree --------------------------------------------------------------

class KdTree:
    """Binary space partition over k-dimensional points.

    Splits the longest edge of each node's bounding box at the lower median;
    recursion stops once a node holds ``leaf_capacity`` points or fewer.
    """

    def __init__(self, points, leaf_capacity: int = 16):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or len(pts) == 0:
            raise ValueError("KdTree needs a nonempty (n, k) array")
        if leaf_capacity < 1:
            raise ValueError("leaf_capacity must be >= 1")
        self.points = pts
        self.leaf_capacity = leaf_capacity
        self.order = np.arange(len(pts))
        # node arrays: axis (-1 for leaf), split value, children, leaf slice
        self.axis, self.split, self.left, self.right = [], [], [], []
        self.start, self.stop = [], []
        self._build(0, len(pts))

    def _new_node(self, start, stop):
        for lst in (self.axis, self.split, self.left, self.right):
            lst.append(-1)
        self.start.append(start)
        self.stop.append(stop)
        return len(self.axis) - 1

    def _build(self, start, stop):
        root = self._new_node(start, stop)
        stack = [root]
        while stack:
            node = stack.pop()
            lo, hi = self.start[node], self.stop[node]
            n = hi - lo
            if n <= self.leaf_capacity:
                continue
            idx = self.order[lo:hi]
            sub = self.points[idx]
            axis = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
            perm = np.lexsort((idx, sub[:, axis]))
            self.order[lo:hi] = idx[perm]
            mid = (n - 1) // 2
            self.axis[node] = axis
            self.split[node] = float(sub[perm[mid], axis])
            cut = lo + mid + 1
            left = self._new_node(lo, cut)
            right = self._new_node(cut, hi)
            self.left[node], self.right[node] = left, right
            stack.extend((right, left))

    def __len__(self):
        return len(self.points)

    def leaf_indices(self):
        """Point indices of every leaf, in node order."""
        return [self.order[self.start[i]:self.stop[i]] for i in range(len(self.axis)) if self.axis[i] < 0]

    def query(self, point, k: int = 1):
        """Exact k nearest neighbors as ``[(index, distance), ...]``.

        Ordered by distance, ties by lower point index.
        """
        q = np.asarray(point, dtype=np.float64)
        k = min(int(k), len(self.points))
        if k < 1:
            raise ValueError("k must be >= 1")
        # max-heap of (-d2, -index) holding the best k so far
        heap = []
        pts, order = self.points, self.order
        axis_, split_, left_, right_ = self.axis, self.split, self.left, self.right
        start_, stop_ = self.start, self.stop
        stack = [(0, 0.0)]
        while stack:
            node, bound = stack.pop()
            if len(heap) == k and bound > -heap[0][0]:
                continue
            ax = axis_[node]
            if ax < 0:
                idx = order[start_[node]:stop_[node]]
                d2 = squared_distances(pts[idx], q)
                for dist2, i in zip(d2.tolist(), idx.tolist()):
                    item = (-dist2, -i)
                    if len(heap) < k:
                        heapq.heappush(heap, item)
                    elif item > heap[0]:
                        heapq.heapreplace(heap, item)
                continue
            diff = q[ax] - split_[node]
            near, far = (left_[node], right_[node]) if diff <= 0 else (right_[node], left_[node])
            stack.append((far, max(bound, diff * diff)))
            stack.append((near, bound))
        best = sorted((-d2, -i) for d2, i in heap)
        return [(i, float(np.sqrt(d2))) for d2, i in best]

    def query_many(self, points, k: int = 1):
        """Batch form of :meth:`query`; returns ``(indices, distances)`` arrays."""
        pts = np.asarray(points, dtype=np.float64)
        k = min(int(k), len(self.points))
        idx = np.empty((len(pts), k), dtype=np.int64)
        dist = np.empty((len(pts), k), dtype=np.float64)
        for r, p in enumerate(pts):
            res = self.query(p, k)
            idx[r] = [i for i, _ in res]
            dist[r] = [d for _, d in res]
        return idx, dist


def kd_build(points, leaf_capacity: int = 16) -> KdTree:
    return KdTree(points, leaf_capacity)


def kd_nearest(tree: KdTree, query):
    return tree.query(query, 1)[0]


def kd_k_nearest(tree: KdTree, query, k: int):
    return tree.query(query, k)


def nearest_indices(source, targets) -> np.ndarray:
    """Index into ``source`` of the nearest point for each row of ``targets``.

    Ties resolve to the lowest source index.
    """
    src = check_positions(source)
    tgt = check_positions(targets, allow_empty=True)
    out = np.full(len(tgt), -1, dtype=np.int64)
    if len(tgt) == 0:
        return out
    # exact hits: distance 0, first occurrence is the lowest index
    rows = np.concatenate([src, tgt])
    _, first, inverse = np.unique(rows, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    hit = first[inverse[len(src):]]
    exact = hit < len(src)
    out[exact] = hit[exact]
    if not exact.all():
        out[~exact] = k_nearest_batch(src, tgt[~exact], 1)[0][:, 0]
    return out


def k_nearest_batch(source, queries, k: int = 1, extra: int = 8):
    """Vectorized k-NN with the same answers as :meth:`KdTree.query`.

    Returns ``(indices, squared_distances)``, both ``(m, min(k, n))``, ordered
    by distance with ties to the lower source index. Candidates come from
    ``cKDTree``; a row is re-resolved over the full tie radius whenever the
    candidate list might cut a tie at the k-th distance.
    """
    src = np.asarray(source, dtype=np.float64)
    q = np.asarray(queries, dtype=np.float64).reshape(-1, src.shape[1])
    n = len(src)
    k = min(int(k), n)
    if k < 1:
        raise ValueError("k must be >= 1")
    m = min(k + extra, n)
    tree = cKDTree(src)
    _, cand = tree.query(q, m)
    cand = np.asarray(cand).reshape(len(q), m)
    d2 = squared_distances(src[cand], q[:, None, :])
    order = np.lexsort((cand, d2), axis=-1)
    cand = np.take_along_axis(cand, order, 1)
    d2 = np.take_along_axis(d2, order, 1)
    # a tie at the k-th distance may extend past the candidate list
    unsafe = np.nonzero(d2[:, k - 1] >= d2[:, m - 1])[0] if m < n else np.zeros(0, dtype=np.int64)
    idx, dist = cand[:, :k].copy(), d2[:, :k].copy()
    for r in unsafe.tolist():
        radius = float(np.sqrt(d2[r, k - 1]))
        ball = np.asarray(tree.query_ball_point(q[r], radius * (1 + 1e-9) + 1e-12), dtype=np.int64)
        dd = squared_distances(src[ball], q[r])
        o = np.lexsort((ball, dd))[:k]
        idx[r], dist[r] = ball[o], dd[o]
    return idx, dist
