"""Differentiable image resampling and Jacobian diagnostics.

The solved transform maps fixed-grid coordinates into moving-image
coordinates, so warping resamples the moving image at T(g) for every
fixed-grid voxel g. Voxel index i on an axis of extent n sits at
normalized coordinate -1 + 2 (i + 0.5) / n (cell-centered).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage

from . import autodiff as ad
from . import tensor as tc
from .errors import GridTooSmall, ShapeMismatch
from .transforms import (
    KeypointSet,
    TransformParams,
    apply_transform,
    normalized_grid,
)


@dataclass
class Image:
    """Intensity image with D spatial extents, values in [0, 1] after ingestion."""

    data: np.ndarray
    spacing: tuple = ()

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if not self.spacing:
            self.spacing = (1.0,) * self.data.ndim

    @property
    def shape(self):
        return self.data.shape

    @property
    def d(self):
        return self.data.ndim


@dataclass
class LabelMap:
    """Integer labels 0..L-1 on the same grid as an Image; 0 is background."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.issubdtype(self.data.dtype, np.integer):
            self.data = np.rint(self.data).astype(np.int64)

    @property
    def shape(self):
        return self.data.shape

    @property
    def num_labels(self):
        return int(self.data.max()) + 1


def grid_sample(img: Image, coords, mode="linear", padding="zeros") -> np.ndarray:
    """Sample img at normalized D-coords; coords is (..., D)."""
    c = np.asarray(coords, dtype=np.float64)
    if c.shape[-1] != img.d:
        raise ShapeMismatch(f"coords last extent {c.shape[-1]} != image D {img.d}")
    flat = c.reshape(-1, img.d)
    out = ad.grid_sample(
        ad.Var(img.data[None], op="const"), ad.Var(flat, op="const"), mode=mode, padding=padding
    ).value[0]
    return out.reshape(c.shape[:-1])


def warp_image(x_m: Image, transform: TransformParams, out_shape=None) -> Image:
    """Resample the moving image onto the fixed grid through the transform."""
    out_shape = tuple(out_shape) if out_shape is not None else x_m.shape
    if len(out_shape) != x_m.d:
        raise ShapeMismatch(f"out_shape {out_shape} vs image D {x_m.d}")
    grid = normalized_grid(out_shape)
    coords = apply_transform(transform, KeypointSet(grid)).points
    vals = grid_sample(x_m, coords, mode="linear", padding="zeros")
    return Image(vals.reshape(out_shape), spacing=x_m.spacing)


def warp_labels(l_m: LabelMap, transform: TransformParams, out_shape=None) -> LabelMap:
    """Nearest-neighbor warp of integer labels; out-of-range fills background 0."""
    out_shape = tuple(out_shape) if out_shape is not None else l_m.shape
    grid = normalized_grid(out_shape)
    coords = apply_transform(transform, KeypointSet(grid)).points
    vals = grid_sample(Image(l_m.data.astype(np.float64)), coords, mode="nearest", padding="zeros")
    return LabelMap(np.rint(vals.reshape(out_shape)).astype(np.int64))


def one_hot(l_m: LabelMap, num_labels=None) -> np.ndarray:
    n = num_labels if num_labels is not None else l_m.num_labels
    return (np.arange(n).reshape((n,) + (1,) * l_m.data.ndim) == l_m.data[None]).astype(np.float64)


def jacobian_field(transform: TransformParams, grid_shape) -> np.ndarray:
    """Per-voxel det of the spatial mapping's derivative.

    Central finite differences of the dense map on interior voxels,
    one-sided at borders, in normalized coordinate units.
    """
    grid_shape = tuple(grid_shape)
    if any(n < 3 for n in grid_shape):
        raise GridTooSmall(f"every extent must be >= 3, got {grid_shape}")
    d = len(grid_shape)
    grid = normalized_grid(grid_shape)
    mapped = apply_transform(transform, KeypointSet(grid)).points.reshape(grid_shape + (d,))
    jac = np.zeros(grid_shape + (d, d))
    for axis in range(d):
        h = 2.0 / grid_shape[axis]  # normalized spacing along this axis
        deriv = np.gradient(mapped, h, axis=axis)
        jac[..., :, axis] = deriv
    return np.linalg.det(jac)


# --- ingestion -------------------------------------------------------------


def load_image(path) -> Image:
    """Load a KMT volume or an 8-bit grayscale PNG (rescaled to [0, 1])."""
    path = str(path)
    if path.endswith(".png"):
        arr = np.asarray(PILImage.open(path).convert("L"), dtype=np.float64) / 255.0
        return Image(arr)
    return Image(tc.read_kmt(path))


def save_image(path, img: Image):
    path = str(path)
    if path.endswith(".png"):
        if img.d != 2:
            raise ShapeMismatch("PNG output requires a 2-D image")
        arr = np.clip(img.data, 0.0, 1.0)
        PILImage.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)
    else:
        tc.write_kmt(path, img.data.astype(np.float32))


def load_labels(path) -> LabelMap:
    return LabelMap(tc.read_kmt(path).astype(np.int64))


def save_labels(path, labels: LabelMap):
    tc.write_kmt(path, labels.data.astype(np.uint8), dtype_code=1)
