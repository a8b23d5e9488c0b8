"""Experiment harnesses: rotation robustness, lambda sweeps, keypoint
repeatability, subject discriminability, and the layer-correlation
diagnostic. Each harness is deterministic given (weights, seed)."""

from __future__ import annotations

import numpy as np

from . import detector as det
from . import metrics as mx
from . import synthdata as sd
from .registration import register_from_keypoints
from .transforms import AffineParams, KeypointSet, apply_affine
from .warp import Image, LabelMap
from .training import push_image_affine


def robustness_sweep(weights, subjects, angles, kind="affine", lam=None, seed=0):
    """Mean Dice per misalignment angle over randomly paired test subjects.

    Returns {"angles": [...], "dice": [...], "baseline_dice": [...]} where
    baseline is the no-registration overlap of the misaligned labels.
    """
    rng = np.random.default_rng(seed)
    n = len(subjects)
    pairs = [(i, int((i + 1 + rng.integers(n - 1)) % n)) for i in range(n)]
    out = {"angles": list(angles), "dice": [], "baseline_dice": [], "seed": seed}
    for angle in angles:
        pair_rng = np.random.default_rng((seed, int(round(angle * 1000))))
        scores, base = [], []
        for i, j in pairs:
            moving_img, moving_lab, _ = sd.misalign(
                subjects[i], angle, rng=pair_rng, modality=0
            )
            fixed_img = subjects[j].images[0]
            fixed_lab = subjects[j].labels
            result = register_from_keypoints(
                moving_img,
                det.detect(weights, moving_img),
                det.detect(weights, fixed_img),
                kind=kind,
                lam=lam,
                out_shape=fixed_img.shape,
                moving_labels=moving_lab,
                fixed_labels=fixed_lab,
            )
            scores.append(result.metrics.dice_mean)
            base.append(mx.dice(moving_lab, fixed_lab)[1])
        out["dice"].append(float(np.mean(scores)))
        out["baseline_dice"].append(float(np.mean(base)))
    return out


def lambda_sweep(
    weights,
    moving: Image,
    fixed: Image,
    lambdas,
    moving_labels: LabelMap | None = None,
    fixed_labels: LabelMap | None = None,
):
    """Detect keypoints once per image, then one solve/warp per lambda."""
    moving_kp = det.detect(weights, moving)
    fixed_kp = det.detect(weights, fixed)
    results = {}
    for lam in lambdas:
        results[float(lam)] = register_from_keypoints(
            moving,
            moving_kp,
            fixed_kp,
            kind="tps",
            lam=float(lam),
            out_shape=fixed.shape,
            moving_labels=moving_labels,
            fixed_labels=fixed_labels,
        )
    return results


def control_point_error(result):
    """Max distance between transformed control points and their targets.

    At lambda = 0 the TPS interpolates exactly, so this is ~0.
    """
    from .transforms import tps_apply

    t = result.transform
    mapped = tps_apply(t, t.control_points)
    # source = fixed keypoints, targets = moving keypoints
    return float(np.max(np.linalg.norm(mapped.points - result.moving_keypoints.points, axis=1)))


def repeatability(weights, image: Image, transforms, voxel_extent=None):
    """Mean keypoint error in voxel units per applied transform.

    For each affine A: move the image content by A, detect, and compare
    with A applied directly to the original keypoints.
    """
    base_kp = det.detect(weights, image)
    extent = voxel_extent or image.shape[0]
    errors = []
    for a in transforms:
        moved = Image(push_image_affine(image.data, a))
        moved_kp = det.detect(weights, moved)
        expected = apply_affine(a, base_kp)
        err_norm = np.linalg.norm(moved_kp.points - expected.points, axis=1)
        errors.append(float(np.mean(err_norm)) * extent / 2.0)
    return errors


def discriminability(weights, subjects, modality_a=0, modality_b=1):
    """S x S matrix of keypoint MSE between subjects' native-frame keypoints.

    Entry (i, j) compares subject i's modality-a keypoints with subject
    j's modality-b keypoints. On the diagonal the two keypoint sets come
    from the same geometry, so a multi-modally consistent detector drives
    those entries far below the off-diagonal ones, which retain each
    subject's pose and shape identity.
    """
    kps_a = [det.detect(weights, s.images[modality_a]) for s in subjects]
    kps_b = [det.detect(weights, s.images[modality_b]) for s in subjects]
    s = len(subjects)
    matrix = np.zeros((s, s))
    for i in range(s):
        for j in range(s):
            matrix[i, j] = float(np.mean((kps_b[j].points - kps_a[i].points) ** 2))
    diag = float(np.mean(np.diag(matrix)))
    off = float(np.mean(matrix[~np.eye(s, dtype=bool)])) if s > 1 else float("nan")
    return matrix, diag, off


def layer_correlation(weights, subject):
    """Per-block mean Pearson correlation of feature maps across modality pairs.

    Constant maps (zero variance) are excluded; a per-layer flag reports
    whether any pair was skipped.
    """
    all_feats = []
    for img in subject.images:
        _, feats, _ = det.forward(weights, img.data, want_features=True)
        all_feats.append([f.value.ravel() for f in feats])
    n_layers = len(all_feats[0])
    n_mod = len(all_feats)
    means, flags = [], []
    for layer in range(n_layers):
        cors, skipped = [], False
        for a in range(n_mod):
            for b in range(a + 1, n_mod):
                x, y = all_feats[a][layer], all_feats[b][layer]
                if x.std() == 0 or y.std() == 0:
                    skipped = True
                    continue
                cors.append(float(np.corrcoef(x, y)[0, 1]))
        means.append(float(np.mean(cors)) if cors else float("nan"))
        flags.append(skipped)
    return means, flags
