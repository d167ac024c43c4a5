"""Volume geometry, image/label volumes, region vocabulary and binary masks.

Arrays are indexed ``data[x, y, z]``. Whenever a volume is flattened (file
payloads, linear voxel indices) the x index varies fastest, matching the
NIfTI on-disk order.

Class codes follow the KiTS convention::

    0 background, 1 kidney, 2 tumor, 3 cyst
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

BACKGROUND = 0
KIDNEY = 1
TUMOR = 2
CYST = 3
CLASS_CODES = (BACKGROUND, KIDNEY, TUMOR, CYST)
CLASS_NAMES = {BACKGROUND: "background", KIDNEY: "kidney", TUMOR: "tumor", CYST: "cyst"}


class GeometryError(ValueError):
    """Invalid geometry, or two volumes whose geometries must agree but do not."""


class LabelValueError(ValueError):
    """A label array holds a value outside the class-code set."""


@dataclass(frozen=True)
class Geometry:
    shape: tuple[int, int, int]
    spacing: tuple[float, float, float]

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        spacing = tuple(float(s) for s in self.spacing)
        if len(shape) != 3 or len(spacing) != 3:
            raise GeometryError(f"expected 3 axes, got shape={shape} spacing={spacing}")
        if any(s < 1 for s in shape):
            raise GeometryError(f"shape entries must be >= 1, got {shape}")
        if not all(np.isfinite(s) and s > 0 for s in spacing):
            raise GeometryError(f"spacing entries must be finite and > 0, got {spacing}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", spacing)

    @property
    def voxel_volume(self) -> float:
        """Volume of one voxel in mm^3."""
        sx, sy, sz = self.spacing
        return sx * sy * sz

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def extent_mm(self) -> tuple[float, float, float]:
        return tuple(n * s for n, s in zip(self.shape, self.spacing))

    def voxel_centers_mm(self, axis: int) -> np.ndarray:
        """Center coordinates (mm) of the voxels along ``axis``: ``(i + 0.5) * spacing``."""
        return (np.arange(self.shape[axis]) + 0.5) * self.spacing[axis]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.flags.writeable = False
    return array


def check_same_geometry(*volumes, what: str = "volumes") -> Geometry:
    geometry = volumes[0].geometry
    for other in volumes[1:]:
        if other.geometry != geometry:
            raise GeometryError(
                f"{what} disagree in geometry: {geometry} vs {other.geometry}"
            )
    return geometry


@dataclass(frozen=True, eq=False)
class _Volume:
    geometry: Geometry
    data: np.ndarray

    def _check_shape(self):
        if self.data.shape != self.geometry.shape:
            raise GeometryError(
                f"data shape {self.data.shape} does not match geometry {self.geometry.shape}"
            )

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and self.geometry == other.geometry
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ImageVolume(_Volume):
    """Scalar intensities (HU before normalization) on a grid, stored as float64."""

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", _frozen(data))
        self._check_shape()
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains NaN or Inf")


@dataclass(frozen=True, eq=False)
class LabelVolume(_Volume):
    """Class codes in {0, 1, 2, 3} on a grid, stored as uint8."""

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.dtype.kind == "f" and not np.all(np.isfinite(raw)):
            raise LabelValueError("label data contains NaN or Inf")
        if raw.size and (raw.min() < 0 or raw.max() > 3 or np.any(raw != np.round(raw))):
            bad = np.unique(raw[(raw < 0) | (raw > 3) | (raw != np.round(raw))])
            raise LabelValueError(f"label values outside {{0,1,2,3}}: {bad[:10].tolist()}")
        object.__setattr__(self, "data", _frozen(raw.astype(np.uint8)))
        self._check_shape()

    def with_data(self, data: np.ndarray) -> "LabelVolume":
        return LabelVolume(self.geometry, data)

    @property
    def foreground(self) -> "BinaryMask":
        return BinaryMask(self.geometry, self.data != BACKGROUND)


@dataclass(frozen=True, eq=False)
class BinaryMask(_Volume):
    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(np.asarray(self.data, dtype=bool)))
        self._check_shape()

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.data))


class Region(enum.Enum):
    """Nested evaluation regions, each a set of class codes."""

    KIDNEY_AND_MASSES = (KIDNEY, TUMOR, CYST)
    MASSES = (TUMOR, CYST)
    TUMOR = (TUMOR,)

    @property
    def codes(self) -> tuple[int, ...]:
        return self.value

    @property
    def label(self) -> str:
        return _REGION_LABELS[self]

    @classmethod
    def parse(cls, text: str) -> "Region":
        key = text.strip().lower().replace("-", "_").replace(" ", "_")
        for region, label in _REGION_LABELS.items():
            if key in (label, region.name.lower()):
                return region
        raise ValueError(f"unknown region {text!r}")


_REGION_LABELS = {
    Region.KIDNEY_AND_MASSES: "kidney_and_masses",
    Region.MASSES: "masses",
    Region.TUMOR: "tumor",
}


def region_mask(labels: LabelVolume, region: Region) -> BinaryMask:
    return BinaryMask(labels.geometry, np.isin(labels.data, region.codes))


def voxel_count_to_mm3(count: int, geometry: Geometry) -> float:
    return count * geometry.voxel_volume
