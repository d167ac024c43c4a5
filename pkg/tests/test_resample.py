import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from segfuse.resample import (
    FULLRES,
    LOWRES,
    TargetSpec,
    resample_image,
    resample_labels,
    resampled_shape,
)
from segfuse.volume import Geometry, ImageVolume, LabelVolume


def test_identity_spacing_image(rng):
    g = Geometry((6, 7, 5), (0.78, 0.78, 3.0))
    image = ImageVolume(g, rng.normal(size=g.shape))
    out = resample_image(image, TargetSpec(spacing=g.spacing))
    assert out.geometry == g
    assert np.array_equal(out.data, image.data)


def test_constant_image_stays_constant():
    image = ImageVolume(Geometry((9, 4, 5), (0.7, 1.1, 2.5)), np.full((9, 4, 5), 42.5))
    out = resample_image(image, TargetSpec(spacing=(1.3, 0.4, 1.7)))
    assert np.allclose(out.data, 42.5, rtol=0, atol=1e-12)


def test_lowres_preset_on_median_kits_shape():
    g = Geometry((512, 512, 104), (0.78, 0.78, 3.0))
    assert resampled_shape(g, LOWRES.spacing) == (217, 217, 132)
    assert resampled_shape(g, FULLRES.spacing) == (512, 512, 312)


def test_presets_spacing_exact(rng):
    image = ImageVolume(Geometry((10, 10, 4), (0.78, 0.78, 3.0)), rng.normal(size=(10, 10, 4)))
    assert resample_image(image, LOWRES).geometry.spacing == (1.84, 1.84, 2.36)
    assert resample_image(image, FULLRES).geometry.spacing == (0.78, 0.78, 1.0)


def test_shape_rounds_half_up_and_clamps():
    assert resampled_shape(Geometry((3, 1, 1), (1, 1, 1)), (2.0, 5.0, 1.0)) == (2, 1, 1)
    assert resampled_shape(Geometry((5, 1, 1), (1, 1, 1)), (2.0, 1.0, 1.0)) == (3, 1, 1)


def test_trilinear_matches_scipy_map_coordinates(rng):
    src = Geometry((7, 6, 5), (1.0, 1.5, 2.0))
    image = ImageVolume(src, rng.normal(size=src.shape))
    target = Geometry((11, 4, 7), (0.7, 2.1, 1.3))
    out = resample_image(image, TargetSpec(geometry=target))
    coords = np.meshgrid(
        *[(np.arange(n) + 0.5) * t / s - 0.5 for n, t, s in zip(target.shape, target.spacing, src.spacing)],
        indexing="ij",
    )
    expected = ndimage.map_coordinates(image.data, coords, order=1, mode="nearest")
    assert np.allclose(out.data, expected, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    st.tuples(*[st.integers(1, 6)] * 3),
    st.tuples(*[st.floats(0.3, 4.0)] * 3),
    st.integers(0, 2**32 - 1),
)
def test_image_bounds_preserved(shape, spacing, seed):
    r = np.random.default_rng(seed)
    image = ImageVolume(Geometry(shape, (1.0, 1.0, 1.0)), r.uniform(-1000, 1000, shape))
    out = resample_image(image, TargetSpec(spacing=spacing))
    assert out.data.min() >= image.data.min() and out.data.max() <= image.data.max()


def test_labels_identity_exact(rng):
    labels = LabelVolume(Geometry((5, 6, 7), (1.84, 1.84, 2.36)), rng.integers(0, 4, (5, 6, 7)))
    assert resample_labels(labels, TargetSpec(spacing=(1.84, 1.84, 2.36))) == labels


def test_single_class_stays_single_class():
    labels = LabelVolume(Geometry((4, 4, 4), (1, 1, 1)), np.full((4, 4, 4), 3))
    out = resample_labels(labels, TargetSpec(spacing=(0.3, 2.2, 1.7)))
    assert set(np.unique(out.data)) == {3}


def test_checkerboard_downsample_values():
    idx = np.indices((4, 4, 4)).sum(axis=0)
    labels = LabelVolume(Geometry((4, 4, 4), (1, 1, 1)), idx % 2)
    out = resample_labels(labels, TargetSpec(spacing=(2, 2, 2)))
    assert out.geometry.shape == (2, 2, 2)
    assert set(np.unique(out.data)) <= {0, 1}


def test_nearest_picks_containing_voxel():
    data = np.arange(4).reshape(4, 1, 1) % 4
    labels = LabelVolume(Geometry((4, 1, 1), (1, 1, 1)), data)
    out = resample_labels(labels, TargetSpec(spacing=(2.0, 1.0, 1.0)))
    # target centers at 1.0 and 3.0 mm fall in source voxels 1 and 3
    assert out.data.ravel().tolist() == [1, 3]


def test_target_spec_validation():
    with pytest.raises(ValueError):
        TargetSpec()
    with pytest.raises(ValueError):
        TargetSpec(spacing=(1, 0, 1))
