"""Hierarchical-region Dice and Surface Dice, per case and aggregated."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .components import binary_dice
from .volume import BinaryMask, LabelVolume, Region, check_same_geometry, region_mask

REGIONS = (Region.KIDNEY_AND_MASSES, Region.MASSES, Region.TUMOR)

# slack on the distance-vs-tolerance comparison so float noise never decides ties
DISTANCE_SLACK_MM = 1e-9


def region_dice(pred: LabelVolume, gt: LabelVolume, region: Region) -> float:
    check_same_geometry(pred, gt, what="prediction and ground truth")
    return binary_dice(region_mask(pred, region), region_mask(gt, region))


def boundary_faces(mask: BinaryMask) -> np.ndarray:
    """Centers (mm) of voxel faces separating the mask from its complement or the volume edge.

    Returns an ``(n, 3)`` array. A face between voxels ``k - 1`` and ``k``
    along an axis sits at ``k * spacing`` on that axis.
    """
    geometry = mask.geometry
    centers = [geometry.voxel_centers_mm(axis) for axis in range(3)]
    chunks = []
    for axis in range(3):
        pad = [(0, 0)] * 3
        pad[axis] = (1, 1)
        padded = np.pad(mask.data, pad, constant_values=False)
        lower = [slice(None)] * 3
        upper = [slice(None)] * 3
        lower[axis] = slice(None, -1)
        upper[axis] = slice(1, None)
        crossing = padded[tuple(lower)] != padded[tuple(upper)]
        idx = np.nonzero(crossing)
        coords = [centers[a][idx[a]] if a != axis else idx[a] * geometry.spacing[a] for a in range(3)]
        chunks.append(np.stack(coords, axis=1))
    return np.concatenate(chunks, axis=0)


def _count_within(points: np.ndarray, reference: np.ndarray, tolerance_mm: float) -> int:
    distances, _ = cKDTree(reference).query(points, k=1)
    return int(np.count_nonzero(distances <= tolerance_mm + DISTANCE_SLACK_MM))


def surface_dice_masks(pred: BinaryMask, gt: BinaryMask, tolerance_mm: float) -> float:
    check_same_geometry(pred, gt, what="prediction and ground truth")
    if tolerance_mm < 0:
        raise ValueError(f"tolerance must be >= 0, got {tolerance_mm}")
    pred_faces = boundary_faces(pred)
    gt_faces = boundary_faces(gt)
    if len(pred_faces) == 0 and len(gt_faces) == 0:
        return 1.0
    if len(pred_faces) == 0 or len(gt_faces) == 0:
        return 0.0
    matched = _count_within(pred_faces, gt_faces, tolerance_mm) + _count_within(
        gt_faces, pred_faces, tolerance_mm
    )
    return matched / (len(pred_faces) + len(gt_faces))


def surface_dice(pred: LabelVolume, gt: LabelVolume, region: Region, tolerance_mm: float) -> float:
    """Fraction of both boundaries lying within ``tolerance_mm`` of the other boundary."""
    check_same_geometry(pred, gt, what="prediction and ground truth")
    return surface_dice_masks(region_mask(pred, region), region_mask(gt, region), tolerance_mm)


@dataclass(frozen=True)
class CaseReport:
    case_id: str
    dice: Mapping[Region, float]
    surface_dice: Mapping[Region, float]

    def as_row(self) -> dict[str, object]:
        row: dict[str, object] = {"case_id": self.case_id}
        for region in REGIONS:
            row[f"dice_{region.label}"] = self.dice[region]
        for region in REGIONS:
            row[f"surface_dice_{region.label}"] = self.surface_dice[region]
        return row


@dataclass(frozen=True)
class Summary:
    n_cases: int
    dice: Mapping[Region, float]
    surface_dice: Mapping[Region, float]
    mean_dice: float = field(init=False)
    mean_surface_dice: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "mean_dice", float(np.mean([self.dice[r] for r in REGIONS])))
        object.__setattr__(
            self, "mean_surface_dice", float(np.mean([self.surface_dice[r] for r in REGIONS]))
        )


def _tolerance_for(tolerance_mm, region: Region) -> float:
    if isinstance(tolerance_mm, Mapping):
        return float(tolerance_mm[region])
    return float(tolerance_mm)


def evaluate_case(
    pred: LabelVolume,
    gt: LabelVolume,
    tolerance_mm: float | Mapping[Region, float],
    case_id: str = "",
) -> CaseReport:
    """Dice and Surface Dice for every region.

    Args:
        tolerance_mm: one tolerance for all regions, or a mapping per region.
    """
    check_same_geometry(pred, gt, what=f"prediction and ground truth of case {case_id!r}")
    dice = {}
    sdice = {}
    for region in REGIONS:
        p, g = region_mask(pred, region), region_mask(gt, region)
        dice[region] = binary_dice(p, g)
        sdice[region] = surface_dice_masks(p, g, _tolerance_for(tolerance_mm, region))
    return CaseReport(case_id, dice, sdice)


def aggregate(reports: Sequence[CaseReport]) -> Summary:
    """Per-region means over cases; the overall means average the three regions."""
    if not reports:
        raise ValueError("cannot aggregate zero case reports")
    return Summary(
        n_cases=len(reports),
        dice={r: float(np.mean([rep.dice[r] for rep in reports])) for r in REGIONS},
        surface_dice={r: float(np.mean([rep.surface_dice[r] for rep in reports])) for r in REGIONS},
    )
