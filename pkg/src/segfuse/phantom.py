"""Synthetic kidney phantoms and controlled degradations of their label maps.

Anatomy is built from analytic primitives: kidneys are ellipsoids, tumors
and cysts are spheres. A voxel takes a primitive's class when its center
lies inside the primitive; tumor overrides cyst overrides kidney.

The image intensities are arbitrary, non-clinical HU levels plus Gaussian
noise. They only exist so that preprocessing has something to chew on.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kvtext
from .components import Connectivity, label_components
from .resample import FULLRES_SPACING, LOWRES, TargetSpec, resample_labels
from .volume import (
    BACKGROUND,
    CYST,
    KIDNEY,
    TUMOR,
    BinaryMask,
    Geometry,
    ImageVolume,
    LabelVolume,
)

CLASS_HU = {BACKGROUND: -50.0, KIDNEY: 120.0, TUMOR: 90.0, CYST: 10.0}


class PhantomSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]
    radii: tuple[float, float, float]

    def contains(self, x, y, z):
        (cx, cy, cz), (rx, ry, rz) = self.center, self.radii
        return ((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 + ((z - cz) / rz) ** 2 <= 1.0

    @property
    def half_extent(self):
        return self.radii


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float

    def contains(self, x, y, z):
        cx, cy, cz = self.center
        return (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= self.radius**2

    @property
    def half_extent(self):
        return (self.radius,) * 3

    @property
    def volume_mm3(self) -> float:
        return 4.0 / 3.0 * np.pi * self.radius**3


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int]
    spacing: tuple[float, float, float]
    kidneys: tuple[Ellipsoid, ...] = ()
    tumors: tuple[Sphere, ...] = ()
    cysts: tuple[Sphere, ...] = ()
    seed: int = 0
    noise_std: float = 10.0

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.shape, self.spacing)

    def validate(self) -> None:
        try:
            extent = self.geometry.extent_mm
        except ValueError as exc:
            raise PhantomSpecError(str(exc)) from exc
        if self.noise_std < 0:
            raise PhantomSpecError("noise_std must be >= 0")
        for prim in (*self.kidneys, *self.tumors, *self.cysts):
            if min(prim.half_extent) <= 0:
                raise PhantomSpecError(f"{prim} has a non-positive radius")
            for c, r, e in zip(prim.center, prim.half_extent, extent):
                if c - r < 0 or c + r > e:
                    raise PhantomSpecError(f"{prim} does not fit inside the {extent} mm volume")
        for prim in (*self.tumors, *self.cysts):
            if not any(k.contains(*prim.center) for k in self.kidneys):
                raise PhantomSpecError(f"{prim} is not centered inside a kidney")


def _paint(data: np.ndarray, geometry: Geometry, prim, code: int) -> None:
    window = []
    for axis in range(3):
        s = geometry.spacing[axis]
        lo = int(np.floor((prim.center[axis] - prim.half_extent[axis]) / s - 0.5))
        hi = int(np.ceil((prim.center[axis] + prim.half_extent[axis]) / s - 0.5)) + 1
        window.append(slice(max(lo, 0), min(hi, geometry.shape[axis])))
    x, y, z = np.meshgrid(
        *(geometry.voxel_centers_mm(a)[window[a]] for a in range(3)), indexing="ij"
    )
    region = data[tuple(window)]
    region[prim.contains(x, y, z)] = code


def voxelize(geometry: Geometry, kidneys=(), tumors=(), cysts=()) -> np.ndarray:
    data = np.zeros(geometry.shape, dtype=np.uint8)
    for prims, code in ((kidneys, KIDNEY), (cysts, CYST), (tumors, TUMOR)):
        for prim in prims:
            _paint(data, geometry, prim, code)
    return data


def generate_phantom(spec: PhantomSpec) -> tuple[ImageVolume, LabelVolume]:
    spec.validate()
    geometry = spec.geometry
    labels = voxelize(geometry, spec.kidneys, spec.tumors, spec.cysts)
    hu = np.array([CLASS_HU[c] for c in sorted(CLASS_HU)])
    rng = np.random.default_rng(spec.seed)
    image = hu[labels] + rng.normal(0.0, spec.noise_std, size=geometry.shape)
    return ImageVolume(geometry, image), LabelVolume(geometry, labels)


def default_phantom_spec(seed: int = 0) -> PhantomSpec:
    """Two kidneys on the full-resolution grid; a tumor in the left one, a cyst in the right."""
    return PhantomSpec(
        shape=(128, 128, 96),
        spacing=FULLRES_SPACING,
        kidneys=(
            Ellipsoid((28.0, 50.0, 48.0), (16.0, 22.0, 32.0)),
            Ellipsoid((72.0, 50.0, 48.0), (16.0, 22.0, 32.0)),
        ),
        tumors=(Sphere((22.0, 44.0, 56.0), 11.0),),
        cysts=(Sphere((76.0, 56.0, 40.0), 7.0),),
        seed=seed,
    )


def random_phantom_spec(
    seed: int,
    shape: tuple[int, int, int] = (40, 40, 40),
    spacing: tuple[float, float, float] = (2.5, 2.5, 2.5),
) -> PhantomSpec:
    """Small randomized phantom: one or two separated kidneys, each with at most one tumor and one cyst.

    Kidney radii keep every blob well above 10,000 mm^3 and tumors are never
    adjacent to each other.
    """
    rng = np.random.default_rng(seed)
    geometry = Geometry(shape, spacing)
    ex, ey, ez = geometry.extent_mm
    n_kidneys = int(rng.integers(1, 3))
    kidneys, tumors, cysts = [], [], []
    for k in range(n_kidneys):
        radii = (
            float(rng.uniform(0.17, 0.22) * ex),
            float(rng.uniform(0.20, 0.30) * ey),
            float(rng.uniform(0.25, 0.40) * ez),
        )
        slot = ex / n_kidneys
        cx = slot * (k + 0.5) + float(rng.uniform(-0.05, 0.05) * ex)
        cx = float(np.clip(cx, radii[0] + 1.0, ex - radii[0] - 1.0))
        center = (
            cx,
            float(rng.uniform(radii[1], ey - radii[1])),
            float(rng.uniform(radii[2], ez - radii[2])),
        )
        kidney = Ellipsoid(center, radii)
        kidneys.append(kidney)
        if rng.random() < 0.8:
            r = float(rng.uniform(0.25, 0.5) * min(radii))
            offset = rng.uniform(-0.4, 0.4, size=3) * np.array(radii)
            c = tuple(float(v) for v in np.array(center) + offset)
            c = tuple(float(np.clip(v, r, e - r)) for v, e in zip(c, (ex, ey, ez)))
            if kidney.contains(*c):
                tumors.append(Sphere(c, r))
        if rng.random() < 0.5:
            r = float(rng.uniform(0.15, 0.3) * min(radii))
            offset = rng.uniform(-0.4, 0.4, size=3) * np.array(radii)
            c = tuple(float(v) for v in np.array(center) + offset)
            c = tuple(float(np.clip(v, r, e - r)) for v, e in zip(c, (ex, ey, ez)))
            if kidney.contains(*c):
                cysts.append(Sphere(c, r))
    return PhantomSpec(
        shape=geometry.shape,
        spacing=geometry.spacing,
        kidneys=tuple(kidneys),
        tumors=tuple(tumors),
        cysts=tuple(cysts),
        seed=seed,
    )


@dataclass(frozen=True)
class DegradeSpec:
    """Corruptions applied in field order: drop, erode tumor, erode boundary, downsample, FP spheres."""

    drop_tumor: bool = False
    erode_tumor: int = 0
    erode_boundary: int = 0
    downsample_to_lowres: bool = False
    fp_tumor_count: int = 0
    fp_radius_mm: tuple[float, float] = (4.0, 7.0)
    seed: int = 0

    def validate(self) -> None:
        if self.erode_tumor < 0 or self.erode_boundary < 0 or self.fp_tumor_count < 0:
            raise PhantomSpecError("counts and erosion steps must be >= 0")
        lo, hi = self.fp_radius_mm
        if not 0 < lo <= hi:
            raise PhantomSpecError(f"fp_radius_mm must satisfy 0 < min <= max, got {self.fp_radius_mm}")


@dataclass(frozen=True)
class DegradeResult:
    labels: LabelVolume
    fp_spheres: tuple[Sphere, ...] = ()
    fp_voxels: int = 0


def _erode(mask: np.ndarray, steps: int) -> np.ndarray:
    return ndimage.binary_erosion(
        mask, structure=ndimage.generate_binary_structure(3, 1), iterations=steps, border_value=0
    )


def roundtrip_lowres(labels: LabelVolume) -> LabelVolume:
    """Nearest-neighbor down to the low-res preset and back onto the original grid."""
    low = resample_labels(labels, LOWRES)
    return resample_labels(low, TargetSpec(geometry=labels.geometry))


def add_fp_tumors(
    labels: LabelVolume,
    count: int,
    radius_mm: tuple[float, float],
    rng: np.random.Generator,
    max_attempts: int = 2000,
) -> DegradeResult:
    """Place ``count`` tumor spheres in background, none touching foreground or each other."""
    geometry = labels.geometry
    extent = geometry.extent_mm
    data = labels.data.copy()
    blocked = ndimage.binary_dilation(data != BACKGROUND, structure=np.ones((3, 3, 3), bool))
    placed, fp_voxels = [], 0
    attempts = 0
    while len(placed) < count:
        attempts += 1
        if attempts > max_attempts:
            raise PhantomSpecError(f"could not place {count} FP tumors in the background")
        r = float(rng.uniform(*radius_mm))
        if any(2 * r > e for e in extent):
            continue
        center = tuple(float(rng.uniform(r, e - r)) for e in extent)
        sphere_mask = voxelize(geometry, tumors=(Sphere(center, r),)) == TUMOR
        if not sphere_mask.any() or (sphere_mask & blocked).any():
            continue
        data[sphere_mask] = TUMOR
        blocked |= ndimage.binary_dilation(sphere_mask, structure=np.ones((3, 3, 3), bool))
        placed.append(Sphere(center, r))
        fp_voxels += int(sphere_mask.sum())
    return DegradeResult(labels.with_data(data), tuple(placed), fp_voxels)


def degrade_with_info(labels: LabelVolume, spec: DegradeSpec) -> DegradeResult:
    spec.validate()
    data = labels.data.copy()
    if spec.drop_tumor:
        data[data == TUMOR] = BACKGROUND
    if spec.erode_tumor:
        tumor = data == TUMOR
        data[tumor & ~_erode(tumor, spec.erode_tumor)] = BACKGROUND
    if spec.erode_boundary:
        fg = data != BACKGROUND
        data[fg & ~_erode(fg, spec.erode_boundary)] = BACKGROUND
    out = labels.with_data(data)
    if spec.downsample_to_lowres:
        out = roundtrip_lowres(out)
    if spec.fp_tumor_count:
        return add_fp_tumors(out, spec.fp_tumor_count, spec.fp_radius_mm, np.random.default_rng(spec.seed))
    return DegradeResult(out)


def degrade(labels: LabelVolume, spec: DegradeSpec) -> LabelVolume:
    return degrade_with_info(labels, spec).labels


# Scenarios: a ground-truth phantom plus a full-res and a low-res "prediction".


@dataclass(frozen=True)
class ScenarioSpec:
    name: str = "consistent"
    seed: int = 0
    full: DegradeSpec = field(default_factory=DegradeSpec)
    low: DegradeSpec = field(default_factory=DegradeSpec)


SCENARIOS = {
    "consistent": ScenarioSpec("consistent"),
    # full-res carries three small spurious tumors; low-res is coarse but clean
    "fp_tumors": ScenarioSpec("fp_tumors", full=DegradeSpec(fp_tumor_count=3, fp_radius_mm=(4.0, 7.0))),
    # full-res under-segments the tumor; low-res still has all of it
    "partial_tumor": ScenarioSpec("partial_tumor", full=DegradeSpec(erode_tumor=3)),
    # full-res misses the tumor entirely
    "missed_tumor": ScenarioSpec("missed_tumor", full=DegradeSpec(drop_tumor=True)),
}

_DEGRADE_KEYS = {f.name for f in dataclasses.fields(DegradeSpec)} - {"seed"}


def load_scenario(path) -> ScenarioSpec:
    """Scenario file: ``base = <name>``, ``seed = N`` and ``full.<field>``/``low.<field>`` overrides."""
    entries = kvtext.read(path)
    base = SCENARIOS.get(entries.pop("base", "consistent"))
    if base is None:
        raise PhantomSpecError(f"{path}: unknown base scenario; choose from {sorted(SCENARIOS)}")
    seed = int(entries.pop("seed", base.seed))
    name = entries.pop("name", base.name)
    overrides: dict[str, dict] = {"full": {}, "low": {}}
    for key, text in entries.items():
        role, _, attr = key.partition(".")
        if role not in overrides or attr not in _DEGRADE_KEYS:
            raise PhantomSpecError(f"{path}: unknown scenario key {key!r}")
        if attr in ("drop_tumor", "downsample_to_lowres"):
            value = kvtext.parse_bool(text)
        elif attr == "fp_radius_mm":
            value = kvtext.parse_floats(text, 2)
        else:
            value = int(text)
        overrides[role][attr] = value
    return ScenarioSpec(
        name=name,
        seed=seed,
        full=dataclasses.replace(base.full, **overrides["full"]),
        low=dataclasses.replace(base.low, **overrides["low"]),
    )


@dataclass(frozen=True)
class Scenario:
    spec: ScenarioSpec
    image: ImageVolume
    ground_truth: LabelVolume
    full: LabelVolume
    low: LabelVolume  # on the low-res grid
    fp_voxels: int
    fp_volume_mm3: float
    expected_raw_tumor_dice: float


def build_scenario(spec: ScenarioSpec | str, seed: int | None = None) -> Scenario:
    """Build the default phantom and its two degraded predictions.

    ``expected_raw_tumor_dice`` is the Tumor Dice of the full-res prediction
    against ground truth, derived from the voxel bookkeeping of the
    degradations rather than by scoring the volume.
    """
    if isinstance(spec, str):
        if spec not in SCENARIOS:
            raise PhantomSpecError(f"unknown scenario {spec!r}; choose from {sorted(SCENARIOS)}")
        spec = SCENARIOS[spec]
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    image, gt = generate_phantom(default_phantom_spec(spec.seed))
    full_spec = dataclasses.replace(spec.full, seed=spec.seed * 2 + 1)
    low_spec = dataclasses.replace(spec.low, seed=spec.seed * 2 + 2)
    full = degrade_with_info(gt, full_spec)
    low = degrade(gt, low_spec)
    low = resample_labels(low, LOWRES)

    gt_tumor = int(np.count_nonzero(gt.data == TUMOR))
    full_tumor = int(np.count_nonzero(full.labels.data == TUMOR))
    shared = int(np.count_nonzero((gt.data == TUMOR) & (full.labels.data == TUMOR)))
    if full_spec.drop_tumor or full_spec.erode_tumor or full_spec.erode_boundary or full_spec.downsample_to_lowres:
        # these change the true-tumor part of the prediction; count it directly
        expected = 2.0 * shared / (gt_tumor + full_tumor) if gt_tumor + full_tumor else 1.0
    else:
        # only FP spheres were added, so the prediction is gt tumor plus fp_voxels
        denom = 2 * gt_tumor + full.fp_voxels
        expected = 2.0 * gt_tumor / denom if denom else 1.0
    return Scenario(
        spec=spec,
        image=image,
        ground_truth=gt,
        full=full.labels,
        low=low,
        fp_voxels=full.fp_voxels,
        fp_volume_mm3=full.fp_voxels * gt.geometry.voxel_volume,
        expected_raw_tumor_dice=expected,
    )


def count_new_tumor_components(before: LabelVolume, after: LabelVolume) -> int:
    """Tumor components of ``after`` that do not touch ``before``'s foreground."""
    labeling = label_components(BinaryMask(after.geometry, after.data == TUMOR), Connectivity.VERTEX26)
    fg = before.data != BACKGROUND
    return sum(1 for c in labeling.components if not fg[labeling.ids == c.id].any())
