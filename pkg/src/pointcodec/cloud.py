"""Point cloud container and input validation helpers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.utils import check_array

COLOR_SPACES = ("RGB", "YUV")


@dataclass(eq=False)
class PointCloud:
    """Positions with optional per-point colors and normals.

    ``positions`` is an ``(T, 3)`` array, integer after voxelization and float
    before. ``colors`` is ``(T, 3)`` uint8 tagged by ``color_space``.
    """

    positions: np.ndarray
    colors: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None
    color_space: str = "RGB"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        pos = np.asarray(self.positions)
        if pos.size == 0:
            pos = pos.reshape(0, 3)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must have shape (T, 3), got {pos.shape}")
        if not np.issubdtype(pos.dtype, np.integer):
            pos = pos.astype(np.float64)
        self.positions = pos
        if self.colors is not None:
            col = np.asarray(self.colors)
            if col.size == 0:
                col = col.reshape(0, 3)
            if col.shape != (len(pos), 3):
                raise ValueError(f"colors must have shape ({len(pos)}, 3), got {col.shape}")
            if col.size and (col.min() < 0 or col.max() > 255):
                raise ValueError("color values must lie in [0, 255]")
            self.colors = col.astype(np.uint8)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64)
            if nrm.shape != (len(pos), 3):
                raise ValueError(f"normals must have shape ({len(pos)}, 3), got {nrm.shape}")
            self.normals = nrm
        if self.color_space not in COLOR_SPACES:
            raise ValueError(f"color_space must be one of {COLOR_SPACES}, got {self.color_space!r}")

    def __len__(self):
        return len(self.positions)

    @property
    def is_integer(self) -> bool:
        return np.issubdtype(self.positions.dtype, np.integer)

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        if self.color_space != other.color_space or len(self) != len(other):
            return False
        if not np.array_equal(self.positions, other.positions):
            return False
        for a, b in ((self.colors, other.colors), (self.normals, other.normals)):
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True

    def take(self, idx) -> "PointCloud":
        """Subset (or reorder) the cloud by index array."""
        idx = np.asarray(idx)
        return PointCloud(
            self.positions[idx],
            None if self.colors is None else self.colors[idx],
            None if self.normals is None else self.normals[idx],
            self.color_space,
        )

    def sorted(self) -> "PointCloud":
        """Copy in lexicographic (x, y, z) order, for set-style comparisons."""
        if len(self) == 0:
            return self.take(np.arange(0))
        order = np.lexsort(self.positions.T[::-1])
        return self.take(order)


def check_positions(X, *, integer=False, non_negative=False, allow_empty=False) -> np.ndarray:
    """Validate an ``(n, 3)`` coordinate array."""
    X = check_array(
        X,
        dtype=None if integer else np.float64,
        ensure_min_samples=0 if allow_empty else 1,
    )
    if X.shape[1] != 3:
        raise ValueError(f"expected 3 coordinates per point, got {X.shape[1]}")
    if integer:
        if not np.issubdtype(X.dtype, np.integer):
            if not np.all(np.mod(X, 1) == 0):
                raise ValueError("positions must be integer voxel coordinates")
        X = X.astype(np.int64)
    if non_negative and X.size and X.min() < 0:
        raise ValueError("positions must be non-negative")
    return X


def check_colors(colors, n_points) -> np.ndarray:
    """Validate an ``(n, 3)`` 8-bit color array."""
    colors = check_array(colors, dtype=None, ensure_min_samples=0)
    if colors.shape != (n_points, 3):
        raise ValueError(f"colors must have shape ({n_points}, 3), got {colors.shape}")
    if colors.size and (colors.min() < 0 or colors.max() > 255):
        raise ValueError("color values must lie in [0, 255]")
    return colors.astype(np.uint8)


def as_point_cloud(X, colors=None) -> PointCloud:
    """Accept either a PointCloud or raw arrays."""
    if isinstance(X, PointCloud):
        if colors is not None:
            return PointCloud(X.positions, check_colors(colors, len(X)), X.normals, X.color_space)
        return X
    X = np.asarray(X)
    if np.issubdtype(X.dtype, np.integer):
        X = check_positions(X, integer=True, allow_empty=True)
    else:
        X = check_positions(X, allow_empty=True)
    if colors is not None:
        colors = check_colors(colors, len(X))
    return PointCloud(X, colors)
