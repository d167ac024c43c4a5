import gzip
import struct

import numpy as np
import pytest

from segfuse.volio import (
    BigEndianError,
    LabelRangeError,
    MalformedHeaderError,
    SidecarError,
    SizeMismatchError,
    TruncatedPayloadError,
    UnsupportedDatatypeError,
    read_nifti,
    read_raw,
    read_volume,
    write_nifti,
    write_raw,
    write_volume,
)
from segfuse.volume import Geometry, GeometryError, ImageVolume, LabelVolume


def hand_header(dim=(3, 2, 2, 2, 1, 1, 1, 1), datatype=2, bitpix=8, pixdim=(1, 1, 1, 1, 1, 1, 1, 1),
                vox_offset=348.0, slope=0.0, inter=0.0, sizeof_hdr=348, magic=b"n+1\0", endian="<"):
    header = bytearray(348)
    header[0:4] = struct.pack(endian + "i", sizeof_hdr)
    header[40:56] = struct.pack(endian + "8h", *dim)
    header[70:72] = struct.pack(endian + "h", datatype)
    header[72:74] = struct.pack(endian + "h", bitpix)
    header[76:108] = struct.pack(endian + "8f", *pixdim)
    header[108:112] = struct.pack(endian + "f", vox_offset)
    header[112:116] = struct.pack(endian + "f", slope)
    header[116:120] = struct.pack(endian + "f", inter)
    header[344:348] = magic
    return bytes(header)


def test_hand_built_label_fixture(tmp_path):
    path = tmp_path / "fixture.nii"
    path.write_bytes(hand_header() + bytes([0, 0, 0, 1, 1, 0, 2, 3]))
    vol = read_nifti(path)
    assert isinstance(vol, LabelVolume)
    assert vol.geometry == Geometry((2, 2, 2), (1, 1, 1))
    # x varies fastest on disk
    assert vol.data.ravel(order="F").tolist() == [0, 0, 0, 1, 1, 0, 2, 3]
    assert vol.data[1, 1, 0] == 1 and vol.data[0, 1, 1] == 2 and vol.data[1, 1, 1] == 3


def test_fixture_with_extension_bytes_and_gzip(tmp_path):
    payload = hand_header(vox_offset=352.0) + b"\0\0\0\0" + bytes([0, 0, 0, 1, 1, 0, 2, 3])
    path = tmp_path / "fixture.nii.gz"
    path.write_bytes(gzip.compress(payload))
    assert read_nifti(path).data.ravel(order="F").tolist() == [0, 0, 0, 1, 1, 0, 2, 3]


def test_malformed_header(tmp_path):
    path = tmp_path / "bad.nii"
    path.write_bytes(hand_header(sizeof_hdr=0) + bytes(8))
    with pytest.raises(MalformedHeaderError):
        read_nifti(path)


def test_big_endian_rejected(tmp_path):
    path = tmp_path / "be.nii"
    path.write_bytes(hand_header(endian=">") + bytes(8))
    with pytest.raises(BigEndianError):
        read_nifti(path)


def test_bad_magic_and_dims(tmp_path):
    path = tmp_path / "m.nii"
    path.write_bytes(hand_header(magic=b"abc\0") + bytes(8))
    with pytest.raises(MalformedHeaderError):
        read_nifti(path)
    path.write_bytes(hand_header(dim=(4, 2, 2, 2, 2, 1, 1, 1)) + bytes(16))
    with pytest.raises(MalformedHeaderError):
        read_nifti(path)


def test_unsupported_datatype(tmp_path):
    path = tmp_path / "f64.nii"
    path.write_bytes(hand_header(datatype=64, bitpix=64) + bytes(64))
    with pytest.raises(UnsupportedDatatypeError):
        read_nifti(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "short.nii"
    path.write_bytes(hand_header() + bytes(5))
    with pytest.raises(TruncatedPayloadError):
        read_nifti(path)


def test_label_out_of_range(tmp_path):
    path = tmp_path / "range.nii"
    path.write_bytes(hand_header() + bytes([0, 0, 0, 1, 1, 0, 2, 9]))
    with pytest.raises(LabelRangeError):
        read_nifti(path, kind="label")
    # the same bytes are a valid image
    assert read_nifti(path, kind="image").data.max() == 9.0


def test_scaling_applied(tmp_path):
    path = tmp_path / "scaled.nii"
    header = hand_header(dim=(3, 1, 1, 1, 1, 1, 1, 1), datatype=16, bitpix=32, slope=2.0, inter=1.0)
    path.write_bytes(header + struct.pack("<f", 3.0))
    vol = read_nifti(path)
    assert isinstance(vol, ImageVolume)
    assert vol.data[0, 0, 0] == 7.0


def test_int16_image(tmp_path):
    path = tmp_path / "i16.nii"
    header = hand_header(dim=(3, 2, 1, 1, 1, 1, 1, 1), datatype=4, bitpix=16, pixdim=(1, 0.78, 0.78, 3.0, 1, 1, 1, 1))
    path.write_bytes(header + struct.pack("<2h", -1000, 302))
    vol = read_nifti(path)
    assert vol.data.ravel().tolist() == [-1000.0, 302.0]
    assert vol.geometry.spacing == tuple(float(np.float32(s)) for s in (0.78, 0.78, 3.0))


@pytest.mark.parametrize("suffix", [".nii", ".nii.gz"])
def test_nifti_label_round_trip(tmp_path, rng, suffix):
    labels = LabelVolume(Geometry((5, 4, 3), (0.78, 0.78, 1.0)), rng.integers(0, 4, (5, 4, 3)))
    path = tmp_path / f"l{suffix}"
    write_nifti(labels, path)
    back = read_nifti(path)
    assert np.array_equal(back.data, labels.data)
    assert back.geometry.shape == labels.geometry.shape
    assert np.allclose(back.geometry.spacing, labels.geometry.spacing, rtol=1e-7)


def test_nifti_image_round_trip_within_float32(tmp_path, rng):
    image = ImageVolume(Geometry((6, 5, 4), (1, 1, 2)), rng.normal(0, 300, (6, 5, 4)))
    path = tmp_path / "img.nii"
    write_nifti(image, path)
    back = read_nifti(path, kind="image")
    expected = image.data.astype(np.float32)
    ulp = np.spacing(np.abs(expected))
    assert np.all(np.abs(back.data - expected) <= ulp)
    assert np.all(np.abs(back.data - image.data) <= ulp)


def test_written_header_matches_layout(tmp_path):
    labels = LabelVolume(Geometry((3, 2, 1), (0.5, 0.5, 2.0)), np.zeros((3, 2, 1)))
    path = tmp_path / "h.nii"
    write_nifti(labels, path)
    blob = path.read_bytes()
    assert struct.unpack_from("<i", blob, 0)[0] == 348
    assert struct.unpack_from("<8h", blob, 40)[:4] == (3, 3, 2, 1)
    assert struct.unpack_from("<h", blob, 70)[0] == 2
    assert struct.unpack_from("<3f", blob, 80) == (0.5, 0.5, 2.0)
    assert blob[344:348] == b"n+1\0"
    assert len(blob) == 352 + 6


def test_empty_shape_unrepresentable():
    with pytest.raises(GeometryError):
        LabelVolume(Geometry((0, 1, 1), (1, 1, 1)), np.zeros((0, 1, 1)))


def test_raw_single_voxel(tmp_path):
    (tmp_path / "v.raw").write_bytes(bytes([2]))
    (tmp_path / "v.txt").write_text("shape = 1 1 1\nspacing_mm = 1 1 1\ndtype = uint8\nkind = label\n")
    vol = read_raw(tmp_path / "v.raw", tmp_path / "v.txt")
    assert isinstance(vol, LabelVolume) and vol.data.tolist() == [[[2]]]


def test_raw_size_mismatch(tmp_path):
    (tmp_path / "v.raw").write_bytes(bytes([2, 1]))
    (tmp_path / "v.txt").write_text("shape = 1 1 3\nspacing_mm = 1 1 1\ndtype = uint8\nkind = label\n")
    with pytest.raises(SizeMismatchError):
        read_raw(tmp_path / "v.raw", tmp_path / "v.txt")


def test_raw_missing_key(tmp_path):
    (tmp_path / "v.raw").write_bytes(bytes([2]))
    (tmp_path / "v.txt").write_text("shape = 1 1 1\ndtype = uint8\nkind = label\n")
    with pytest.raises(SidecarError):
        read_raw(tmp_path / "v.raw", tmp_path / "v.txt")


def test_raw_image_round_trip(tmp_path, rng):
    data = rng.normal(0, 100, (7, 5, 3)).astype(np.float32)
    image = ImageVolume(Geometry((7, 5, 3), (1.0, 2.0, 3.0)), data)
    write_raw(image, tmp_path / "i.raw", tmp_path / "i.txt")
    assert read_raw(tmp_path / "i.raw", tmp_path / "i.txt") == image


def test_raw_label_round_trip_via_dispatch(tmp_path, rng):
    labels = LabelVolume(Geometry((4, 4, 2), (1.84, 1.84, 2.36)), rng.integers(0, 4, (4, 4, 2)))
    write_volume(labels, tmp_path / "l.raw")
    assert read_volume(tmp_path / "l.raw") == labels
