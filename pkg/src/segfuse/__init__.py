"""Multi-scale fusion of kidney/tumor CT segmentations, with the preprocessing
and evaluation around it."""

from .components import Connectivity, binary_dice, filter_min_volume, label_components
from .fusion import (
    FusionConfig,
    ensemble_join,
    gate_by_lowres,
    hull_merge_tumor,
    join_predictions,
    postprocess_pair,
    tumor_cross_scale_filter,
)
from .metrics import aggregate, evaluate_case, region_dice, surface_dice
from .volio import read_nifti, read_raw, read_volume, write_nifti, write_raw, write_volume
from .volume import (
    BinaryMask,
    Geometry,
    ImageVolume,
    LabelVolume,
    Region,
    region_mask,
    voxel_count_to_mm3,
)

__version__ = "0.1.0"
