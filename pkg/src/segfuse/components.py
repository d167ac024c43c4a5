"""Connected components, binary Dice and minimum-volume blob filtering."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import (
    BACKGROUND,
    BinaryMask,
    Geometry,
    LabelVolume,
    check_same_geometry,
)


class Connectivity(enum.Enum):
    FACE6 = "face6"
    VERTEX26 = "vertex26"

    @property
    def structure(self) -> np.ndarray:
        rank = 1 if self is Connectivity.FACE6 else 3
        return ndimage.generate_binary_structure(3, rank)

    @classmethod
    def parse(cls, text: str) -> "Connectivity":
        key = str(text).strip().lower()
        aliases = {"6": cls.FACE6, "26": cls.VERTEX26}
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass(frozen=True)
class Component:
    id: int
    voxel_count: int
    volume_mm3: float
    # inclusive voxel index bounds per axis
    bbox_min: tuple[int, int, int]
    bbox_max: tuple[int, int, int]

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(lo, hi + 1) for lo, hi in zip(self.bbox_min, self.bbox_max))


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    geometry: Geometry
    ids: np.ndarray
    components: tuple[Component, ...]

    @property
    def count(self) -> int:
        return len(self.components)

    def mask_of(self, component_id: int) -> np.ndarray:
        return self.ids == component_id


def label_components(
    mask: BinaryMask, conn: Connectivity = Connectivity.VERTEX26
) -> ComponentLabeling:
    """Label connected true voxels.

    IDs run 1..K, ordered by each component's smallest x-fastest linear voxel
    index; background is 0.
    """
    raw, n = ndimage.label(mask.data, structure=conn.structure)
    if n == 0:
        ids = np.zeros(mask.geometry.shape, dtype=np.int32)
        ids.flags.writeable = False
        return ComponentLabeling(mask.geometry, ids, ())

    flat = raw.ravel(order="F")
    found, first = np.unique(flat, return_index=True)
    if found[0] == 0:
        found, first = found[1:], first[1:]
    lut = np.zeros(n + 1, dtype=np.int32)
    lut[found[np.argsort(first, kind="stable")]] = np.arange(1, n + 1, dtype=np.int32)
    ids = lut[raw]
    ids.flags.writeable = False

    counts = np.bincount(ids.ravel(), minlength=n + 1)
    voxel_volume = mask.geometry.voxel_volume
    components = []
    for cid, sl in enumerate(ndimage.find_objects(ids), start=1):
        components.append(
            Component(
                id=cid,
                voxel_count=int(counts[cid]),
                volume_mm3=int(counts[cid]) * voxel_volume,
                bbox_min=tuple(s.start for s in sl),
                bbox_max=tuple(s.stop - 1 for s in sl),
            )
        )
    return ComponentLabeling(mask.geometry, ids, tuple(components))


def dice_from_counts(intersection: int, size_a: int, size_b: int) -> float:
    """``2|A∩B| / (|A| + |B|)``; 1.0 when both sets are empty."""
    total = size_a + size_b
    if total == 0:
        return 1.0
    return 2.0 * intersection / total


def binary_dice(a: BinaryMask, b: BinaryMask) -> float:
    check_same_geometry(a, b, what="masks")
    intersection = int(np.count_nonzero(a.data & b.data))
    return dice_from_counts(intersection, a.count, b.count)


def overlap_table(ids_a: np.ndarray, ids_b: np.ndarray) -> dict[tuple[int, int], int]:
    """Voxel counts shared by each pair of nonzero component IDs."""
    both = (ids_a > 0) & (ids_b > 0)
    if not both.any():
        return {}
    pairs, counts = np.unique(
        np.stack([ids_a[both], ids_b[both]]), axis=1, return_counts=True
    )
    return {(int(i), int(j)): int(c) for (i, j), c in zip(pairs.T, counts)}


def filter_min_volume(
    labels: LabelVolume,
    threshold_mm3: float,
    conn: Connectivity = Connectivity.VERTEX26,
) -> LabelVolume:
    """Set whole-foreground blobs with volume strictly below the threshold to background."""
    if threshold_mm3 < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold_mm3}")
    labeling = label_components(labels.foreground, conn)
    small = [c.id for c in labeling.components if c.volume_mm3 < threshold_mm3]
    if not small:
        return labels
    data = labels.data.copy()
    data[np.isin(labeling.ids, small)] = BACKGROUND
    return labels.with_data(data)
