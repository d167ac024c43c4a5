"""Grid resampling: trilinear for images, nearest-neighbor for labels.

Voxel ``i`` of a grid with spacing ``s`` is centered at ``(i + 0.5) * s`` mm.
Both grids share the origin at the corner of voxel 0, so resampling to the
input's own geometry is an exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import floor

import numpy as np

from .volume import Geometry, ImageVolume, LabelVolume

LOWRES_SPACING = (1.84, 1.84, 2.36)
FULLRES_SPACING = (0.78, 0.78, 1.0)


@dataclass(frozen=True)
class TargetSpec:
    """Either a target spacing (shape derived from the input extent) or a full geometry."""

    spacing: tuple[float, float, float] | None = None
    geometry: Geometry | None = None

    def __post_init__(self):
        if (self.spacing is None) == (self.geometry is None):
            raise ValueError("give exactly one of spacing or geometry")
        if self.spacing is not None:
            spacing = tuple(float(s) for s in self.spacing)
            if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
                raise ValueError(f"target spacing must be 3 positive numbers, got {self.spacing}")
            object.__setattr__(self, "spacing", spacing)

    def resolve(self, source: Geometry) -> Geometry:
        if self.geometry is not None:
            return self.geometry
        return Geometry(resampled_shape(source, self.spacing), self.spacing)


LOWRES = TargetSpec(spacing=LOWRES_SPACING)
FULLRES = TargetSpec(spacing=FULLRES_SPACING)
PRESETS = {"lowres": LOWRES, "fullres": FULLRES}


def resampled_shape(source: Geometry, spacing) -> tuple[int, int, int]:
    """``round_half_up(n * s_in / s_out)`` per axis, clamped to at least 1."""
    return tuple(
        max(1, floor(n * s_in / s_out + 0.5))
        for n, s_in, s_out in zip(source.shape, source.spacing, spacing)
    )


def _source_coordinates(source: Geometry, target: Geometry, axis: int) -> np.ndarray:
    # continuous source index of each target voxel center
    ratio = target.spacing[axis] / source.spacing[axis]
    return (np.arange(target.shape[axis]) + 0.5) * ratio - 0.5


def _linear_along(data: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    n = data.shape[axis]
    coords = np.clip(coords, 0.0, n - 1)
    lo = np.floor(coords).astype(np.intp)
    hi = np.minimum(lo + 1, n - 1)
    weight_shape = [1, 1, 1]
    weight_shape[axis] = -1
    w = (coords - lo).reshape(weight_shape)
    return np.take(data, lo, axis=axis) * (1.0 - w) + np.take(data, hi, axis=axis) * w


def resample_image(vol: ImageVolume, spec: TargetSpec) -> ImageVolume:
    """Trilinear resampling with edge clamping (three separable linear passes)."""
    target = spec.resolve(vol.geometry)
    data = vol.data
    for axis in range(3):
        data = _linear_along(data, _source_coordinates(vol.geometry, target, axis), axis)
    return ImageVolume(target, data)


def nearest_indices(source: Geometry, target: Geometry, axis: int) -> np.ndarray:
    """Index of the source voxel containing each target voxel center."""
    ratio = target.spacing[axis] / source.spacing[axis]
    index = np.floor((np.arange(target.shape[axis]) + 0.5) * ratio).astype(np.intp)
    return np.clip(index, 0, source.shape[axis] - 1)


def resample_labels(labels: LabelVolume, spec: TargetSpec) -> LabelVolume:
    target = spec.resolve(labels.geometry)
    if target == labels.geometry:
        return labels
    ix, iy, iz = (nearest_indices(labels.geometry, target, axis) for axis in range(3))
    return LabelVolume(target, labels.data[np.ix_(ix, iy, iz)])
