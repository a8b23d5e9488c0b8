"""Alignment-quality metrics: Dice, boundary Hausdorff, Jacobian stats."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_erosion, generate_binary_structure
from scipy.spatial import cKDTree

from .errors import EmptyMask, ShapeMismatch
from .warp import LabelMap


@dataclass
class MetricsBundle:
    dice_mean: float
    dice_per_label: dict
    hausdorff: float
    hausdorff95: float
    jd_std: float
    jd_neg_frac: float

    def to_dict(self):
        return {
            "dice_mean": self.dice_mean,
            "dice_per_label": {str(k): v for k, v in self.dice_per_label.items()},
            "hausdorff": self.hausdorff,
            "hausdorff95": self.hausdorff95,
            "jd_std": self.jd_std,
            "jd_neg_frac": self.jd_neg_frac,
        }


def dice(a: LabelMap, b: LabelMap):
    """Per-label (label > 0) and mean Dice.

    Labels empty in both maps are excluded from the mean; empty in
    exactly one map scores 0.
    """
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    labels = sorted(set(np.unique(a.data)) | set(np.unique(b.data)))
    per_label = {}
    for lab in labels:
        if lab == 0:
            continue
        ma = a.data == lab
        mb = b.data == lab
        na, nb = int(ma.sum()), int(mb.sum())
        if na == 0 and nb == 0:
            continue
        per_label[int(lab)] = 2.0 * int((ma & mb).sum()) / (na + nb)
    mean = float(np.mean(list(per_label.values()))) if per_label else 0.0
    return per_label, mean


def boundary_voxels(mask):
    """Foreground voxels with at least one background face-neighbor."""
    mask = np.asarray(mask, dtype=bool)
    structure = generate_binary_structure(mask.ndim, 1)
    interior = binary_erosion(mask, structure=structure, border_value=0)
    return np.argwhere(mask & ~interior)


def hausdorff(a, b, percentile=None):
    """Symmetric Hausdorff distance over boundary voxel sets, in voxels."""
    ba = boundary_voxels(a)
    bb = boundary_voxels(b)
    if len(ba) == 0 or len(bb) == 0:
        raise EmptyMask("hausdorff requires two nonempty masks")
    d_ab = cKDTree(bb).query(ba)[0]
    d_ba = cKDTree(ba).query(bb)[0]
    if percentile is not None:
        return float(max(np.percentile(d_ab, percentile), np.percentile(d_ba, percentile)))
    return float(max(d_ab.max(), d_ba.max()))


def jacobian_stats(field_values):
    """(population std, fraction of voxels with det < 0)."""
    vals = np.asarray(field_values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise EmptyMask("empty Jacobian field")
    return float(vals.std()), float(np.mean(vals < 0))


def compute_bundle(warped_labels: LabelMap, fixed_labels: LabelMap, jd_field) -> MetricsBundle:
    per_label, mean = dice(warped_labels, fixed_labels)
    fg_a = warped_labels.data > 0
    fg_b = fixed_labels.data > 0
    if fg_a.any() and fg_b.any():
        hd = hausdorff(fg_a, fg_b)
        hd95 = hausdorff(fg_a, fg_b, percentile=95)
    else:
        hd = hd95 = float("nan")
    jd_std, jd_neg = jacobian_stats(jd_field)
    return MetricsBundle(
        dice_mean=mean,
        dice_per_label=per_label,
        hausdorff=hd,
        hausdorff95=hd95,
        jd_std=jd_std,
        jd_neg_frac=jd_neg,
    )
