"""Reading and writing volumes: a little-endian NIfTI-1 subset and raw + sidecar.

NIfTI header fields consumed (byte offsets)::

    sizeof_hdr 0..4   dim 40..56      datatype 70..72   pixdim 76..108
    vox_offset 108..112   scl_slope 112..116   scl_inter 116..120   magic 344..348

Orientation fields are ignored on read; spacing comes from ``pixdim[1..3]``.
Files ending in ``.gz`` are gzip-compressed.

The raw format is an x-fastest little-endian payload plus a UTF-8 sidecar::

    shape = 7 5 3
    spacing_mm = 1.0 1.0 2.5
    dtype = float32
    kind = image
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from . import kvtext
from .volume import Geometry, ImageVolume, LabelValueError, LabelVolume

HEADER_SIZE = 348
DATA_OFFSET = 352

NIFTI_DTYPES = {2: np.dtype("<u1"), 4: np.dtype("<i2"), 16: np.dtype("<f4")}
NIFTI_CODES = {np.dtype("<u1"): 2, np.dtype("<i2"): 4, np.dtype("<f4"): 16}
RAW_DTYPES = {"uint8": np.dtype("<u1"), "int16": np.dtype("<i2"), "float32": np.dtype("<f4")}

KINDS = ("image", "label")


class VolumeIOError(Exception):
    """Base class for volume file errors."""


class MalformedHeaderError(VolumeIOError):
    pass


class BigEndianError(MalformedHeaderError):
    pass


class UnsupportedDatatypeError(VolumeIOError):
    pass


class TruncatedPayloadError(VolumeIOError):
    pass


class LabelRangeError(VolumeIOError, LabelValueError):
    pass


class SidecarError(VolumeIOError):
    pass


class SizeMismatchError(VolumeIOError):
    pass


def _read_bytes(path: Path) -> bytes:
    payload = path.read_bytes()
    if path.name.endswith(".gz"):
        try:
            payload = gzip.decompress(payload)
        except (OSError, EOFError) as exc:
            raise TruncatedPayloadError(f"{path}: bad gzip stream ({exc})") from exc
    return payload


def _write_bytes(path: Path, payload: bytes) -> None:
    if path.name.endswith(".gz"):
        payload = gzip.compress(payload, mtime=0)
    kvtext.atomic_write_bytes(path, payload)


def _build_volume(values: np.ndarray, geometry: Geometry, kind: str, source):
    if kind == "label":
        try:
            return LabelVolume(geometry, values)
        except LabelValueError as exc:
            raise LabelRangeError(f"{source}: {exc}") from exc
    return ImageVolume(geometry, values)


def _resolve_kind(kind: str | None, dtype: np.dtype) -> str:
    if kind is None:
        return "label" if dtype == np.uint8 else "image"
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    return kind


def parse_nifti_header(header: bytes) -> dict:
    if len(header) < HEADER_SIZE:
        raise MalformedHeaderError(f"header is {len(header)} bytes, expected {HEADER_SIZE}")
    (sizeof_hdr,) = struct.unpack_from("<i", header, 0)
    if sizeof_hdr != HEADER_SIZE:
        if struct.unpack_from(">i", header, 0)[0] == HEADER_SIZE:
            raise BigEndianError("big-endian NIfTI files are not supported")
        raise MalformedHeaderError(f"sizeof_hdr is {sizeof_hdr}, expected {HEADER_SIZE}")
    magic = header[344:348]
    if magic not in (b"n+1\0", b"ni1\0"):
        raise MalformedHeaderError(f"bad magic {magic!r}")
    dim = struct.unpack_from("<8h", header, 40)
    if dim[0] != 3:
        raise MalformedHeaderError(f"dim[0] is {dim[0]}, only 3-D volumes are supported")
    (datatype,) = struct.unpack_from("<h", header, 70)
    if datatype not in NIFTI_DTYPES:
        raise UnsupportedDatatypeError(f"datatype {datatype} not in {sorted(NIFTI_DTYPES)}")
    pixdim = struct.unpack_from("<8f", header, 76)
    vox_offset, scl_slope, scl_inter = struct.unpack_from("<3f", header, 108)
    try:
        geometry = Geometry(dim[1:4], pixdim[1:4])
    except ValueError as exc:
        raise MalformedHeaderError(str(exc)) from exc
    return {
        "geometry": geometry,
        "dtype": NIFTI_DTYPES[datatype],
        "vox_offset": vox_offset,
        "scl_slope": scl_slope,
        "scl_inter": scl_inter,
        "single_file": magic == b"n+1\0",
    }


def read_nifti(path, kind: str | None = None):
    """Read a NIfTI-1 volume.

    Args:
        path: ``.nii``, ``.nii.gz`` or ``.hdr`` (paired ``.img``) file.
        kind: ``"image"``, ``"label"``, or None to pick ``label`` for uint8
            data and ``image`` otherwise.

    Returns:
        An ImageVolume or LabelVolume.
    """
    path = Path(path)
    blob = _read_bytes(path)
    info = parse_nifti_header(blob[:HEADER_SIZE])
    if info["single_file"]:
        payload_source = blob
        offset = max(int(info["vox_offset"]), HEADER_SIZE)
    else:
        img_name = path.name.replace(".hdr", ".img")
        payload_source = _read_bytes(path.with_name(img_name))
        offset = int(info["vox_offset"])

    geometry = info["geometry"]
    dtype = info["dtype"]
    nbytes = geometry.size * dtype.itemsize
    if len(payload_source) < offset + nbytes:
        raise TruncatedPayloadError(
            f"{path}: payload has {max(len(payload_source) - offset, 0)} bytes, expected {nbytes}"
        )
    flat = np.frombuffer(payload_source, dtype=dtype, count=geometry.size, offset=offset)
    values = flat.reshape(geometry.shape, order="F")

    slope, inter = info["scl_slope"], info["scl_inter"]
    if slope != 0 and np.isfinite(slope) and (slope, inter) != (1.0, 0.0):
        values = values.astype(np.float64) * slope + inter
    return _build_volume(values, geometry, _resolve_kind(kind, dtype), path)


def nifti_header(geometry: Geometry, dtype: np.dtype) -> bytes:
    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)
    struct.pack_into("<8h", header, 40, 3, *geometry.shape, 1, 1, 1, 1)
    struct.pack_into("<hh", header, 70, NIFTI_CODES[dtype], dtype.itemsize * 8)
    struct.pack_into("<8f", header, 76, 1.0, *geometry.spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<3f", header, 108, float(DATA_OFFSET), 1.0, 0.0)
    header[123] = 2  # xyzt_units: mm
    struct.pack_into("<hh", header, 252, 1, 0)  # qform_code=1, identity quaternion
    header[344:348] = b"n+1\0"
    return bytes(header)


def write_nifti(volume, path) -> None:
    """Write labels as uint8 or images as float32, single-file NIfTI-1."""
    dtype = np.dtype("<u1") if isinstance(volume, LabelVolume) else np.dtype("<f4")
    payload = (
        nifti_header(volume.geometry, dtype)
        + b"\0\0\0\0"
        + np.asarray(volume.data, dtype=dtype).tobytes(order="F")
    )
    _write_bytes(Path(path), payload)


def read_raw(path_data, path_meta):
    meta = kvtext.read(path_meta)
    missing = [k for k in ("shape", "spacing_mm", "dtype", "kind") if k not in meta]
    if missing:
        raise SidecarError(f"{path_meta}: missing keys {missing}")
    try:
        geometry = Geometry(kvtext.parse_ints(meta["shape"], 3), kvtext.parse_floats(meta["spacing_mm"], 3))
    except ValueError as exc:
        raise SidecarError(f"{path_meta}: {exc}") from exc
    if meta["dtype"] not in RAW_DTYPES:
        raise UnsupportedDatatypeError(f"{path_meta}: dtype {meta['dtype']!r} not in {sorted(RAW_DTYPES)}")
    if meta["kind"] not in KINDS:
        raise SidecarError(f"{path_meta}: kind must be one of {KINDS}")
    dtype = RAW_DTYPES[meta["dtype"]]
    payload = _read_bytes(Path(path_data))
    expected = geometry.size * dtype.itemsize
    if len(payload) != expected:
        raise SizeMismatchError(f"{path_data}: payload has {len(payload)} bytes, shape needs {expected}")
    values = np.frombuffer(payload, dtype=dtype).reshape(geometry.shape, order="F")
    return _build_volume(values, geometry, meta["kind"], path_data)


def write_raw(volume, path_data, path_meta) -> None:
    if isinstance(volume, LabelVolume):
        dtype_name, kind = "uint8", "label"
    else:
        dtype_name, kind = "float32", "image"
    payload = np.asarray(volume.data, dtype=RAW_DTYPES[dtype_name]).tobytes(order="F")
    _write_bytes(Path(path_data), payload)
    kvtext.write(
        {
            "shape": volume.geometry.shape,
            "spacing_mm": volume.geometry.spacing,
            "dtype": dtype_name,
            "kind": kind,
        },
        path_meta,
    )


def read_volume(path, kind: str | None = None):
    """Dispatch on suffix: NIfTI for ``.nii``/``.nii.gz``/``.hdr``, raw otherwise.

    Raw files take their sidecar from ``<path>.txt``.
    """
    path = Path(path)
    if path.name.endswith((".nii", ".nii.gz", ".hdr")):
        return read_nifti(path, kind)
    volume = read_raw(path, raw_sidecar_path(path))
    if kind is not None and _resolve_kind(kind, np.dtype("u1")) != (
        "label" if isinstance(volume, LabelVolume) else "image"
    ):
        volume = _build_volume(volume.data, volume.geometry, kind, path)
    return volume


def write_volume(volume, path) -> None:
    path = Path(path)
    if path.name.endswith((".nii", ".nii.gz")):
        write_nifti(volume, path)
    else:
        write_raw(volume, path, raw_sidecar_path(path))


def raw_sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".txt")
