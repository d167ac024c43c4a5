"""Multi-scale fusion of a full-resolution and a low-resolution label map.

``postprocess_pair`` runs, in this order:

1. gate      drop full-res foreground blobs with no low-res foreground support
2. tumor_filter  keep a tumor component only if the other scale has a tumor
                 component with Dice strictly above the threshold
3. join      union of both foregrounds, full-res class wins on overlap
4. hull_merge    relabel foreground inside each tumor component's convex hull as tumor
5. min_volume    drop foreground blobs smaller than the volume threshold
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import kvtext
from .components import (
    Connectivity,
    dice_from_counts,
    filter_min_volume,
    label_components,
    overlap_table,
)
from .hull import hull_equations, inside_hull
from .resample import TargetSpec, resample_labels
from .volume import (
    BACKGROUND,
    KIDNEY,
    TUMOR,
    BinaryMask,
    LabelVolume,
    check_same_geometry,
)

STEP_ORDER = ("gate", "tumor_filter", "join", "hull_merge", "min_volume")
CONFLICT_RULES = ("full_res_wins",)
FP_REPLACEMENTS = {"background": BACKGROUND, "kidney": KIDNEY}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    tumor_dice_threshold: float = 0.3
    min_volume_mm3: float = 10_000.0
    connectivity: Connectivity = Connectivity.VERTEX26
    gate: bool = True
    tumor_filter: bool = True
    join: bool = True
    hull_merge: bool = True
    min_volume: bool = True
    conflict_rule: str = "full_res_wins"
    # class given to tumor voxels rejected by the cross-scale filter
    tumor_fp_replacement: str = "background"
    # 0 keeps any blob touching low-res foreground with at least one voxel
    gate_min_overlap_fraction: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.tumor_dice_threshold <= 1.0:
            raise ConfigError(f"tumor_dice_threshold must lie in [0, 1], got {self.tumor_dice_threshold}")
        if not self.min_volume_mm3 >= 0:
            raise ConfigError(f"min_volume_mm3 must be >= 0, got {self.min_volume_mm3}")
        if not 0.0 <= self.gate_min_overlap_fraction <= 1.0:
            raise ConfigError("gate_min_overlap_fraction must lie in [0, 1]")
        if self.conflict_rule not in CONFLICT_RULES:
            raise ConfigError(f"conflict_rule must be one of {CONFLICT_RULES}")
        if self.tumor_fp_replacement not in FP_REPLACEMENTS:
            raise ConfigError(f"tumor_fp_replacement must be one of {sorted(FP_REPLACEMENTS)}")

    def with_steps(self, **toggles: bool) -> "FusionConfig":
        return dataclasses.replace(self, **toggles)

    def all_steps_off(self) -> "FusionConfig":
        return self.with_steps(**{step: False for step in STEP_ORDER})

    def to_entries(self) -> dict[str, object]:
        entries: dict[str, object] = {}
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            entries[field.name] = value.value if isinstance(value, Connectivity) else value
        entries["step_order"] = ",".join(STEP_ORDER)
        return entries

    @classmethod
    def from_entries(cls, entries: dict[str, str]) -> "FusionConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(entries) - set(names) - {"step_order"})
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "step_order" in entries:
            order = tuple(s.strip() for s in entries["step_order"].split(","))
            if order != STEP_ORDER:
                raise ConfigError(f"step_order is fixed to {','.join(STEP_ORDER)}")
        kwargs = {}
        try:
            for key, text in entries.items():
                if key == "step_order":
                    continue
                if key == "connectivity":
                    kwargs[key] = Connectivity.parse(text)
                elif key in STEP_ORDER:
                    kwargs[key] = kvtext.parse_bool(text)
                elif key in ("conflict_rule", "tumor_fp_replacement"):
                    kwargs[key] = text
                else:
                    kwargs[key] = float(text)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "FusionConfig":
        try:
            return cls.from_entries(kvtext.read(path))
        except kvtext.KeyValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


DEFAULT_CONFIG = FusionConfig()


def gate_by_lowres(
    full: LabelVolume,
    low_on_full_grid: LabelVolume,
    conn: Connectivity = Connectivity.VERTEX26,
    min_overlap_fraction: float = 0.0,
) -> LabelVolume:
    """Keep full-res foreground blobs that share at least one voxel with low-res foreground."""
    check_same_geometry(full, low_on_full_grid, what="full and low predictions")
    labeling = label_components(full.foreground, conn)
    if labeling.count == 0:
        return full
    support = np.bincount(
        labeling.ids[low_on_full_grid.data != BACKGROUND], minlength=labeling.count + 1
    )
    removed = []
    for comp in labeling.components:
        overlap = support[comp.id]
        if overlap == 0 or overlap < min_overlap_fraction * comp.voxel_count:
            removed.append(comp.id)
    if not removed:
        return full
    data = full.data.copy()
    data[np.isin(labeling.ids, removed)] = BACKGROUND
    return full.with_data(data)


def _tumor_labeling(labels: LabelVolume, conn: Connectivity):
    return label_components(BinaryMask(labels.geometry, labels.data == TUMOR), conn)


def tumor_cross_scale_filter(
    full: LabelVolume,
    low_on_full_grid: LabelVolume,
    cfg: FusionConfig = DEFAULT_CONFIG,
) -> tuple[LabelVolume, LabelVolume]:
    """Drop tumor components lacking a cross-scale partner with Dice > threshold.

    Returns:
        The filtered (full, low) pair. Rejected tumor voxels take the class
        named by ``cfg.tumor_fp_replacement``.
    """
    check_same_geometry(full, low_on_full_grid, what="full and low predictions")
    full_cc = _tumor_labeling(full, cfg.connectivity)
    low_cc = _tumor_labeling(low_on_full_grid, cfg.connectivity)
    keep_full, keep_low = set(), set()
    for (i, j), shared in overlap_table(full_cc.ids, low_cc.ids).items():
        dice = dice_from_counts(
            shared,
            full_cc.components[i - 1].voxel_count,
            low_cc.components[j - 1].voxel_count,
        )
        if dice > cfg.tumor_dice_threshold:
            keep_full.add(i)
            keep_low.add(j)

    replacement = FP_REPLACEMENTS[cfg.tumor_fp_replacement]

    def drop(labels: LabelVolume, labeling, keep) -> LabelVolume:
        rejected = [c.id for c in labeling.components if c.id not in keep]
        if not rejected:
            return labels
        data = labels.data.copy()
        data[np.isin(labeling.ids, rejected)] = replacement
        return labels.with_data(data)

    return (
        drop(full, full_cc, keep_full),
        drop(low_on_full_grid, low_cc, keep_low),
    )


def join_predictions(
    full: LabelVolume,
    low_on_full_grid: LabelVolume,
    cfg: FusionConfig = DEFAULT_CONFIG,
) -> LabelVolume:
    """Union of both foregrounds; where both are foreground the full-res class is kept."""
    check_same_geometry(full, low_on_full_grid, what="full and low predictions")
    data = np.where(full.data != BACKGROUND, full.data, low_on_full_grid.data)
    return full.with_data(data)


def hull_merge_tumor(
    labels: LabelVolume, conn: Connectivity = Connectivity.VERTEX26
) -> LabelVolume:
    """Relabel foreground voxels inside each tumor component's convex hull as tumor.

    Hulls are taken over voxel centers in mm. Background is never relabeled.
    Components whose centers are collinear or coplanar are left as they are.
    """
    labeling = _tumor_labeling(labels, conn)
    if labeling.count == 0:
        return labels
    geometry = labels.geometry
    centers = [geometry.voxel_centers_mm(axis) for axis in range(3)]
    face = ndimage.generate_binary_structure(3, 1)
    out = labels.data.copy()
    changed = False
    for comp in labeling.components:
        sl = comp.slices
        member = labeling.ids[sl] == comp.id
        # interior voxels lie inside the hull of the surface voxels
        surface = member & ~ndimage.binary_erosion(member, structure=face, border_value=0)
        grid = np.meshgrid(*(c[s] for c, s in zip(centers, sl)), indexing="ij")
        equations = hull_equations(np.stack([g[surface] for g in grid], axis=1))
        if equations is None:
            continue
        window = labels.data[sl]
        candidates = (window != BACKGROUND) & (window != TUMOR)
        if not candidates.any():
            continue
        queries = np.stack([g[candidates] for g in grid], axis=1)
        inside = inside_hull(equations, queries)
        if inside.any():
            target = out[sl]
            idx = tuple(a[inside] for a in np.nonzero(candidates))
            target[idx] = TUMOR
            changed = True
    return labels.with_data(out) if changed else labels


def postprocess_pair(
    full: LabelVolume, low: LabelVolume, cfg: FusionConfig = DEFAULT_CONFIG
) -> LabelVolume:
    """Fuse a full-res prediction with a low-res one (resampled onto the full grid first)."""
    low = resample_labels(low, TargetSpec(geometry=full.geometry))
    out = full
    if cfg.gate:
        out = gate_by_lowres(out, low, cfg.connectivity, cfg.gate_min_overlap_fraction)
    if cfg.tumor_filter:
        out, low = tumor_cross_scale_filter(out, low, cfg)
    if cfg.join:
        out = join_predictions(out, low, cfg)
    if cfg.hull_merge:
        out = hull_merge_tumor(out, cfg.connectivity)
    if cfg.min_volume:
        out = filter_min_volume(out, cfg.min_volume_mm3, cfg.connectivity)
    return out


def ensemble_join(results: Sequence[LabelVolume], cfg: FusionConfig = DEFAULT_CONFIG) -> LabelVolume:
    """Left fold of ``join_predictions``; earlier results win on overlapping foreground."""
    if len(results) == 0:
        raise ValueError("ensemble_join needs at least one result")
    check_same_geometry(*results, what="ensemble members")
    out = results[0]
    for other in results[1:]:
        out = join_predictions(out, other, cfg)
    return out
