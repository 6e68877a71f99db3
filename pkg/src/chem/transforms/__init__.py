from .estimators import (
    ShearletTransform,
    SubbandRMSNormalizer,
    WaveletTransform,
    denormalize_values,
    finest_scales,
    make_transform,
    reconstruct_filtered,
    subband_rms,
    subband_rms_normalize,
    transform_from_layout,
)
from .io import field_from_bytes, field_from_json, field_to_bytes, field_to_json, load_field, save_field
from .layout import APPROX, CoefficientField, Subband, SubbandLayout
from .shearlet import ShearletSpec, partition_defect, shearlet_forward, shearlet_inverse, shearlet_windows
from .wavelet import WAVELET_FAMILIES, WaveletSpec, dwt_forward, dwt_inverse, orthonormality_defects

__all__ = [
    "APPROX",
    "CoefficientField",
    "ShearletSpec",
    "ShearletTransform",
    "Subband",
    "SubbandLayout",
    "SubbandRMSNormalizer",
    "WAVELET_FAMILIES",
    "WaveletSpec",
    "WaveletTransform",
    "denormalize_values",
    "dwt_forward",
    "dwt_inverse",
    "field_from_bytes",
    "field_from_json",
    "field_to_bytes",
    "field_to_json",
    "finest_scales",
    "load_field",
    "make_transform",
    "orthonormality_defects",
    "partition_defect",
    "reconstruct_filtered",
    "save_field",
    "shearlet_forward",
    "shearlet_inverse",
    "shearlet_windows",
    "subband_rms",
    "subband_rms_normalize",
    "transform_from_layout",
]
