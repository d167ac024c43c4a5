"""Convex hulls of voxel-center point sets and point-in-hull tests."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull, QhullError

INSIDE_TOLERANCE_MM = 1e-9
_CHUNK = 1 << 16


def hull_equations(points: np.ndarray) -> np.ndarray | None:
    """Facet half-spaces ``n . x + b <= 0`` of the hull, or None when the points span less than 3-D."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 4:
        return None
    centered = points - points.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-9) < 3:
        return None
    try:
        return ConvexHull(points).equations
    except QhullError:
        return None


def inside_hull(equations: np.ndarray, queries: np.ndarray, tol: float = INSIDE_TOLERANCE_MM) -> np.ndarray:
    normals, offsets = equations[:, :3], equations[:, 3]
    inside = np.empty(len(queries), dtype=bool)
    for start in range(0, len(queries), _CHUNK):
        block = queries[start : start + _CHUNK]
        inside[start : start + _CHUNK] = np.all(block @ normals.T + offsets <= tol, axis=1)
    return inside
