"""Keypoint-based image registration with closed-form affine/TPS solves."""

from .detector import DetectorConfig, DetectorWeights, detect, init_weights
from .registration import RegistrationResult, register
from .transforms import (
    AffineParams,
    KeypointSet,
    TpsParams,
    apply_affine,
    bending_energy,
    solve_affine,
    solve_tps,
    tps_apply,
)
from .warp import Image, LabelMap, warp_image, warp_labels

__all__ = [
    "AffineParams",
    "DetectorConfig",
    "DetectorWeights",
    "Image",
    "KeypointSet",
    "LabelMap",
    "RegistrationResult",
    "TpsParams",
    "apply_affine",
    "bending_energy",
    "detect",
    "init_weights",
    "register",
    "solve_affine",
    "solve_tps",
    "tps_apply",
    "warp_image",
    "warp_labels",
]

__version__ = "0.1.0"
