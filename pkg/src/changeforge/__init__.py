"""Anomalous change detection and its robustness to adversarial image translation."""

from .acd import (
    AnomalyMap,
    DetectionSet,
    GaussianChangeModel,
    detect,
    fit_gaussian,
    hacd_map,
    lcra_map,
    threshold_map,
)
from .evalkit import RobustnessCurve, export_curve, read_curve, robust_ratio, robustness_curve
from .raster import (
    ImagePair,
    MultibandImage,
    NormalizationSpec,
    TileDataset,
    fit_normalization,
    load_image,
    save_image,
)

__version__ = "0.1.0"

__all__ = [
    "AnomalyMap", "DetectionSet", "GaussianChangeModel", "ImagePair", "MultibandImage",
    "NormalizationSpec", "RobustnessCurve", "TileDataset", "detect", "export_curve",
    "fit_gaussian", "fit_normalization", "hacd_map", "lcra_map", "load_image", "read_curve",
    "robust_ratio", "robustness_curve", "save_image", "threshold_map",
]
