"""Region-adaptive hierarchical transform over occupied voxels.

Each octree level is collapsed in three passes (x, then y, then z). Two
sibling nodes with weights ``w1``, ``w2`` and coefficients ``a1`` (lower
coordinate), ``a2`` merge through the orthonormal butterfly::

    low  = ( sqrt(w1) * a1 + sqrt(w2) * a2) / sqrt(w1 + w2)
    high = ( sqrt(w2) * a1 - sqrt(w1) * a2) / sqrt(w1 + w2)

``low`` moves up with weight ``w1 + w2``; ``high`` is emitted. The matrix is
symmetric and orthogonal, so the same butterfly inverts itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spatial import depth_for


@dataclass
class _Pass:
    first: np.ndarray   # node index (previous pass) of the lower sibling / single
    second: np.ndarray  # upper sibling, or -1 for nodes without a pair
    w1: np.ndarray
    w2: np.ndarray


@dataclass
class RahtTree:
    """Merge schedule derived from geometry alone (the decoder rebuilds it)."""

    passes: list
    n_points: int
    order: np.ndarray  # leaf index -> input point index

    @property
    def n_high(self) -> int:
        return sum(int((p.second >= 0).sum()) for p in self.passes)


def raht_tree(positions) -> RahtTree:
    pos = np.asarray(positions, dtype=np.int64)
    if len(pos) == 0:
        return RahtTree([], 0, np.zeros(0, dtype=np.int64))
    if len(np.unique(pos, axis=0)) != len(pos):
        raise ValueError("RAHT needs unique voxel positions")
    pos = pos - pos.min(axis=0)
    order = np.lexsort(pos.T[::-1])
    coords = pos[order]
    weights = np.ones(len(coords), dtype=np.int64)
    passes = []
    for _ in range(max(depth_for(pos), 1)):
        for axis in range(3):
            key = coords.copy()
            key[:, axis] >>= 1
            srt = np.lexsort((coords[:, axis], key[:, 2], key[:, 1], key[:, 0]))
            ks = key[srt]
            same = np.all(ks[1:] == ks[:-1], axis=1)
            is_second = np.r_[False, same]
            heads = np.nonzero(~is_second)[0]
            first = srt[heads]
            has_pair = np.r_[same, False][heads]
            second = np.where(has_pair, srt[np.minimum(heads + 1, len(srt) - 1)], -1)
            w1 = weights[first]
            w2 = np.where(has_pair, weights[np.maximum(second, 0)], 0)
            passes.append(_Pass(first, second, w1, w2))
            coords = ks[heads]
            weights = w1 + w2
        if len(coords) == 1:
            break
    return RahtTree(passes, len(pos), order)


def raht_forward(tree: RahtTree, values) -> np.ndarray:
    """Coefficients ``(n, channels)``: high-pass in pass order, DC last."""
    vals = np.asarray(values, dtype=np.float64)
    squeeze = vals.ndim == 1
    if squeeze:
        vals = vals[:, None]
    if tree.n_points == 0:
        return vals.copy()
    cur = vals[tree.order]
    highs = []
    for p in tree.passes:
        pair = p.second >= 0
        a1 = cur[p.first]
        nxt = a1.copy()
        if pair.any():
            w1 = p.w1[pair].astype(np.float64)[:, None]
            w2 = p.w2[pair].astype(np.float64)[:, None]
            s = np.sqrt(w1 + w2)
            x1, x2 = a1[pair], cur[p.second[pair]]
            nxt[pair] = (np.sqrt(w1) * x1 + np.sqrt(w2) * x2) / s
            highs.append((np.sqrt(w2) * x1 - np.sqrt(w1) * x2) / s)
        cur = nxt
    out = np.concatenate(highs + [cur]) if highs else cur
    return out[:, 0] if squeeze else out


def raht_inverse(tree: RahtTree, coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64)
    squeeze = c.ndim == 1
    if squeeze:
        c = c[:, None]
    if tree.n_points == 0:
        return c.copy()
    counts = [int((p.second >= 0).sum()) for p in tree.passes]
    offsets = np.r_[0, np.cumsum(counts)]
    cur = c[-1:]
    for pi in range(len(tree.passes) - 1, -1, -1):
        p = tree.passes[pi]
        n_prev = len(p.first) + int((p.second >= 0).sum())
        prev = np.empty((n_prev, c.shape[1]))
        pair = p.second >= 0
        prev[p.first[~pair]] = cur[~pair]
        if pair.any():
            w1 = p.w1[pair].astype(np.float64)[:, None]
            w2 = p.w2[pair].astype(np.float64)[:, None]
            s = np.sqrt(w1 + w2)
            low = cur[pair]
            high = c[offsets[pi]:offsets[pi + 1]]
            prev[p.first[pair]] = (np.sqrt(w1) * low + np.sqrt(w2) * high) / s
            prev[p.second[pair]] = (np.sqrt(w2) * low - np.sqrt(w1) * high) / s
        cur = prev
    out = np.empty_like(cur)
    out[tree.order] = cur
    return out[:, 0] if squeeze else out
