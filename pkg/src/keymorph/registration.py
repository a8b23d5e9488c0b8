"""Single-pair registration: detect keypoints, solve, warp, score."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import detector as det
from . import metrics as mx
from .transforms import (
    AffineParams,
    KeypointSet,
    TpsParams,
    TransformParams,
    solve_affine,
    solve_tps,
)
from .warp import Image, LabelMap, jacobian_field, warp_image, warp_labels


@dataclass
class RegistrationResult:
    warped: Image
    transform: TransformParams
    moving_keypoints: KeypointSet
    fixed_keypoints: KeypointSet
    lam: float | None
    metrics: mx.MetricsBundle | None
    timing_ms: float

    def to_dict(self):
        from .transforms import transform_to_dict

        return {
            "transform": transform_to_dict(self.transform),
            "moving_keypoints": self.moving_keypoints.points.tolist(),
            "fixed_keypoints": self.fixed_keypoints.points.tolist(),
            "lambda": self.lam,
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "timing_ms": self.timing_ms,
        }


def solve_transform(moving_kp: KeypointSet, fixed_kp: KeypointSet, kind, lam=None):
    """Solve with the fixed keypoints as source: T maps fixed-grid
    coordinates into moving-image coordinates."""
    if kind == "affine":
        return solve_affine(fixed_kp, moving_kp)
    return solve_tps(fixed_kp, moving_kp, 0.0 if lam is None else lam)


def register_from_keypoints(
    moving: Image,
    moving_kp: KeypointSet,
    fixed_kp: KeypointSet,
    kind="tps",
    lam=None,
    out_shape=None,
    moving_labels: LabelMap | None = None,
    fixed_labels: LabelMap | None = None,
) -> RegistrationResult:
    t0 = time.perf_counter()
    transform = solve_transform(moving_kp, fixed_kp, kind, lam)
    out_shape = tuple(out_shape) if out_shape is not None else moving.shape
    warped = warp_image(moving, transform, out_shape)
    bundle = None
    if moving_labels is not None and fixed_labels is not None:
        warped_labels = warp_labels(moving_labels, transform, out_shape)
        jd = jacobian_field(transform, out_shape)
        interior = jd[tuple(slice(1, -1) for _ in out_shape)]
        bundle = mx.compute_bundle(warped_labels, fixed_labels, interior)
    ms = (time.perf_counter() - t0) * 1000.0
    return RegistrationResult(
        warped=warped,
        transform=transform,
        moving_keypoints=moving_kp,
        fixed_keypoints=fixed_kp,
        lam=None if kind == "affine" else (0.0 if lam is None else float(lam)),
        metrics=bundle,
        timing_ms=ms,
    )


def register(
    weights: det.DetectorWeights,
    moving: Image,
    fixed: Image,
    kind="tps",
    lam=None,
    moving_labels=None,
    fixed_labels=None,
) -> RegistrationResult:
    moving_kp = det.detect(weights, moving)
    fixed_kp = det.detect(weights, fixed)
    return register_from_keypoints(
        moving,
        moving_kp,
        fixed_kp,
        kind=kind,
        lam=lam,
        out_shape=fixed.shape,
        moving_labels=moving_labels,
        fixed_labels=fixed_labels,
    )
