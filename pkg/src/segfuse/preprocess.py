"""Intensity clipping/normalization, foreground statistics and patch sampling."""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil
from typing import Iterable, Sequence

import numpy as np

from . import kvtext
from .volume import BACKGROUND, GeometryError, ImageVolume, LabelVolume, check_same_geometry


class NoForegroundError(ValueError):
    pass


class DegenerateStatsError(ValueError):
    pass


@dataclass(frozen=True)
class IntensityStats:
    clip_low: float
    clip_high: float
    mean: float
    std: float

    def __post_init__(self):
        if not self.clip_low < self.clip_high:
            raise DegenerateStatsError(
                f"clip_low ({self.clip_low}) must be below clip_high ({self.clip_high})"
            )
        if not self.std > 0:
            raise DegenerateStatsError(f"std must be > 0, got {self.std}")

    def to_dict(self) -> dict[str, float]:
        return {
            "clip_low": self.clip_low,
            "clip_high": self.clip_high,
            "mean": self.mean,
            "std": self.std,
        }

    @classmethod
    def from_dict(cls, entries: dict[str, str]) -> "IntensityStats":
        unknown = set(entries) - {"clip_low", "clip_high", "mean", "std"}
        if unknown:
            raise kvtext.KeyValueError(f"unknown stats keys: {sorted(unknown)}")
        return cls(*(float(entries[k]) for k in ("clip_low", "clip_high", "mean", "std")))


# KiTS23 training-set foreground statistics.
KITS23_STATS = IntensityStats(clip_low=-58.0, clip_high=302.0, mean=103.0, std=73.3)


@dataclass(frozen=True)
class PatchSpec:
    size: tuple[int, int, int] = (128, 128, 128)
    oversample_fraction: float = 1 / 3

    def __post_init__(self):
        if len(self.size) != 3 or any(int(s) < 1 for s in self.size):
            raise ValueError(f"patch size must be 3 integers >= 1, got {self.size}")
        if not 0.0 <= self.oversample_fraction <= 1.0:
            raise ValueError(f"oversample_fraction must lie in [0, 1], got {self.oversample_fraction}")
        object.__setattr__(self, "size", tuple(int(s) for s in self.size))


@dataclass(frozen=True)
class Patch:
    image: np.ndarray
    labels: np.ndarray
    origin: tuple[int, int, int]
    # "foreground" (centered on a voxel of foreground_class), "uniform", or
    # "uniform_fallback" (foreground requested but the case has none)
    mode: str
    foreground_class: int | None = None


def percentile(values: np.ndarray, q: float) -> float:
    """Linear interpolation between closest ranks: rank ``(n - 1) * q / 100`` of the sorted values."""
    return float(np.percentile(values, q, method="linear"))


def compute_foreground_stats(cases: Iterable[tuple[ImageVolume, LabelVolume]]) -> IntensityStats:
    """Pool every voxel with a nonzero label across cases.

    Returns clip bounds at the 0.5/99.5 percentiles and the population
    mean/std of the pooled values.
    """
    pooled = []
    for image, labels in cases:
        check_same_geometry(image, labels, what="image and labels")
        pooled.append(image.data[labels.data != BACKGROUND])
    values = np.concatenate(pooled) if pooled else np.empty(0)
    if values.size == 0:
        raise NoForegroundError("no foreground voxels in any case")
    return IntensityStats(
        clip_low=percentile(values, 0.5),
        clip_high=percentile(values, 99.5),
        mean=float(values.mean()),
        std=float(values.std()),
    )


def clip_and_normalize(vol: ImageVolume, stats: IntensityStats = KITS23_STATS) -> ImageVolume:
    clipped = np.clip(vol.data, stats.clip_low, stats.clip_high)
    return ImageVolume(vol.geometry, (clipped - stats.mean) / stats.std)


def _origin_bounds(n: int, size: int) -> tuple[int, int]:
    # patches larger than the axis cover it fully and are padded on either side
    return min(0, n - size), max(0, n - size)


def _extract(data: np.ndarray, origin, size, fill) -> np.ndarray:
    out = np.full(size, fill, dtype=data.dtype)
    src, dst = [], []
    for o, s, n in zip(origin, size, data.shape):
        lo, hi = max(o, 0), min(o + s, n)
        src.append(slice(lo, hi))
        dst.append(slice(lo - o, hi - o))
    out[tuple(dst)] = data[tuple(src)]
    return out


def sample_patches(
    vol: ImageVolume,
    labels: LabelVolume,
    spec: PatchSpec,
    count: int,
    seed: int,
) -> list[Patch]:
    """Draw ``count`` patches, at least ``ceil(count * oversample_fraction)`` of them around foreground.

    Each foreground patch picks a class uniformly among the foreground classes
    present in the case, then a voxel of that class, then an origin such that
    the voxel lies inside the patch. The remaining patches have uniform
    origins. Out-of-volume regions are padded with 0 (image) and background
    (labels). The foreground patches come first in the returned list.
    """
    check_same_geometry(vol, labels, what="image and labels")
    rng = np.random.default_rng(seed)
    shape = vol.geometry.shape
    size = spec.size
    bounds = [_origin_bounds(n, s) for n, s in zip(shape, size)]

    present = [int(c) for c in np.unique(labels.data) if c != BACKGROUND]
    # the epsilon keeps float noise such as 10 * 0.3 = 3.0000000000000004 from rounding up
    n_foreground = ceil(count * spec.oversample_fraction - 1e-12) if count > 0 else 0

    patches = []
    for index in range(count):
        wants_foreground = index < n_foreground
        if wants_foreground and present:
            cls = present[int(rng.integers(len(present)))]
            voxels = np.argwhere(labels.data == cls)
            voxel = voxels[int(rng.integers(len(voxels)))]
            origin = tuple(
                int(rng.integers(max(v - s + 1, lo), min(v, hi) + 1))
                for v, s, (lo, hi) in zip(voxel, size, bounds)
            )
            mode = "foreground"
        else:
            cls = None
            origin = tuple(int(rng.integers(lo, hi + 1)) for lo, hi in bounds)
            mode = "uniform_fallback" if wants_foreground else "uniform"
        patches.append(
            Patch(
                image=_extract(vol.data, origin, size, 0.0),
                labels=_extract(labels.data, origin, size, BACKGROUND),
                origin=origin,
                mode=mode,
                foreground_class=cls,
            )
        )
    return patches


AUGMENT_OPS = ("mirror_x", "mirror_y", "mirror_z", "rot90_xy")


def augment_patch(
    image: np.ndarray,
    labels: np.ndarray,
    ops: Sequence[str],
    seed: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply mirror / 90-degree in-plane rotation ops to an image/label pair.

    With ``seed=None`` every op in ``ops`` is applied, in order. With a seed,
    each op is applied independently with probability 1/2.
    """
    if image.shape != labels.shape:
        raise GeometryError(f"patch shapes differ: {image.shape} vs {labels.shape}")
    unknown = [op for op in ops if op not in AUGMENT_OPS]
    if unknown:
        raise ValueError(f"unknown augmentation ops {unknown}; choose from {AUGMENT_OPS}")
    rng = None if seed is None else np.random.default_rng(seed)
    for op in ops:
        if rng is not None and rng.random() < 0.5:
            continue
        if op == "rot90_xy":
            image, labels = np.rot90(image, axes=(0, 1)), np.rot90(labels, axes=(0, 1))
        else:
            axis = "xyz".index(op[-1])
            image, labels = np.flip(image, axis), np.flip(labels, axis)
    return np.ascontiguousarray(image), np.ascontiguousarray(labels)
