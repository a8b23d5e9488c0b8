"""Synthetic multi-modal phantom subjects.

Each subject is an elliptical ring with two interior blobs and a core,
jittered per subject, rendered under three pseudo-modalities that share
one label map but differ strongly in contrast. Five labels: 0 background,
1 outer ring, 2 and 3 blobs, 4 inner core.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import tensor as tc
from .training import AugmentationRanges, sample_augmentation
from .transforms import (
    AffineParams,
    KeypointSet,
    apply_affine,
    compose_affine,
    identity_affine,
    invert_affine,
    normalized_grid,
)
from .warp import Image, LabelMap, warp_image, warp_labels

NUM_LABELS = 5
NUM_MODALITIES = 3

# per-label base intensity for each pseudo-modality. Contrast orderings
# flip between modalities, and every foreground (label, modality) value is
# globally unique with at least 0.07 separation, so no label in one
# modality masquerades as another label in a different modality
_MODALITY_LEVELS = np.array(
    [
        [0.05, 0.947, 0.512, 0.295, 0.657],
        [0.05, 0.150, 0.730, 0.875, 0.367],
        [0.08, 0.585, 0.222, 0.802, 0.440],
    ]
)


@dataclass
class SyntheticSubject:
    subject_id: int
    seed: int
    labels: LabelMap
    images: list  # one Image per modality


def _ellipse_mask(grid, center, radii, rot=0.0):
    rel = grid - np.asarray(center)
    if len(center) == 2 and rot != 0.0:
        c, s = np.cos(rot), np.sin(rot)
        rel = rel @ np.array([[c, -s], [s, c]]).T
    return np.sum((rel / np.asarray(radii)) ** 2, axis=1) <= 1.0


def generate_labels(seed, shape):
    """Canonical anatomy under a per-subject pose affine plus mild jitter.

    Subject variation is dominated by a global tilt/scale/shift so that a
    well-registered pair overlaps almost perfectly; the residual shape
    jitter is kept small by design.
    """
    rng = np.random.default_rng(seed)
    d = len(shape)
    grid = normalized_grid(shape)

    # per-subject pose: tilt (in-plane), anisotropic scale, translation
    tilt = rng.uniform(-0.3, 0.3)
    scales = rng.uniform(0.85, 1.1, d)
    shift = rng.uniform(-0.08, 0.08, d)
    c, s = np.cos(tilt), np.sin(tilt)
    rot = np.eye(d)
    rot[0, 0], rot[0, 1], rot[1, 0], rot[1, 1] = c, -s, s, c
    pose = rot @ np.diag(scales)
    # evaluate canonical masks in the pre-pose frame
    grid = (grid - shift) @ np.linalg.inv(pose).T

    # structure centers form a well-spread quadrilateral (ring center,
    # two blobs ~120 degrees apart, core offset from center) so that the
    # label centroids alone pin down an affine map with good conditioning
    outer = np.array([0.68, 0.58, 0.62][:d]) + rng.uniform(-0.01, 0.01, d)
    thickness = 0.18 + rng.uniform(-0.005, 0.005)
    inner = outer - thickness

    core_r = np.full(d, 0.19) + rng.uniform(-0.008, 0.008, d)
    core_ang = -1.45 + rng.uniform(-0.05, 0.05)
    core_rad = 0.30 + rng.uniform(-0.012, 0.012)
    core_c = np.zeros(d)
    core_c[0], core_c[1] = core_rad * np.sin(core_ang), core_rad * np.cos(core_ang)
    if d == 3:
        core_c[2] = rng.uniform(-0.04, 0.04)

    blob_r = 0.155 + rng.uniform(-0.006, 0.006, 2)
    ang = np.array([0.75, 2.9]) + rng.uniform(-0.05, 0.05, 2)
    rad = 0.38 + rng.uniform(-0.012, 0.012, 2)
    blob_c = []
    for a, r in zip(ang, rad):
        cb = np.zeros(d)
        cb[0], cb[1] = r * np.sin(a), r * np.cos(a)
        if d == 3:
            cb[2] = rng.uniform(-0.05, 0.05)
        blob_c.append(cb)

    labels = np.zeros(shape, dtype=np.int64)
    ring = _ellipse_mask(grid, np.zeros(d), outer) & ~_ellipse_mask(
        grid, np.zeros(d), inner
    )
    labels[ring.reshape(shape)] = 1
    for li, (cb, r) in enumerate(zip(blob_c, blob_r), start=2):
        labels[_ellipse_mask(grid, cb, np.full(d, r)).reshape(shape)] = li
    labels[_ellipse_mask(grid, core_c, core_r).reshape(shape)] = 4
    return LabelMap(labels)


def render_modality(subject_or_labels, modality, seed=0) -> Image:
    """Render one pseudo-modality: label transfer + smooth bias + mild noise."""
    if modality >= NUM_MODALITIES:
        raise ValueError(f"modality must be < {NUM_MODALITIES}, got {modality}")
    labels = (
        subject_or_labels.labels
        if isinstance(subject_or_labels, SyntheticSubject)
        else subject_or_labels
    )
    if isinstance(subject_or_labels, SyntheticSubject):
        seed = subject_or_labels.seed
    rng = np.random.default_rng((seed, modality))
    base = _MODALITY_LEVELS[modality][labels.data]
    bias = gaussian_filter(rng.standard_normal(labels.shape), sigma=labels.shape[0] / 4)
    span = np.ptp(bias)
    if span > 0:
        bias = (bias - bias.min()) / span - 0.5
    noise = 0.01 * rng.standard_normal(labels.shape)
    img = np.clip(base + 0.03 * bias + noise, 0.0, 1.0)
    return Image(img)


def generate_subject(seed, shape=(64, 64)) -> SyntheticSubject:
    labels = generate_labels(seed, tuple(shape))
    subject = SyntheticSubject(subject_id=seed, seed=seed, labels=labels, images=[])
    subject.images = [render_modality(labels, k, seed=seed) for k in range(NUM_MODALITIES)]
    return subject


def misalign(subject: SyntheticSubject, rotation_deg, extra=None, rng=None, modality=0):
    """Rotate (and optionally further transform) one render of a subject.

    2-D: one in-plane rotation uniform in +-rotation_deg. 3-D: 1 to 3
    axes chosen at random, each rotated uniformly up to the given degree.
    Returns (image, labels, applied affine); resampling the original
    image directly through the returned affine reproduces the output.
    """
    rng = rng or np.random.default_rng(0)
    d = subject.labels.data.ndim
    if not 0.0 <= rotation_deg <= 180.0:
        raise ValueError(f"rotation_deg must be in [0, 180], got {rotation_deg}")

    if d == 2:
        angles = [np.deg2rad(rng.uniform(-rotation_deg, rotation_deg))]
    else:
        n_axes = int(rng.integers(1, 4))
        chosen = rng.choice(3, size=n_axes, replace=False)
        angles = np.zeros(3)
        angles[chosen] = np.deg2rad(rng.uniform(-rotation_deg, rotation_deg, n_axes))

    from .training import _rotation_matrix  # shared rotation composition

    lin = _rotation_matrix(d, np.atleast_1d(angles))
    affine = AffineParams(np.hstack([lin, np.zeros((d, 1))]))
    if extra is not None:
        affine = compose_affine(sample_augmentation(rng, extra, d), affine)

    image = warp_image(subject.images[modality], affine)
    labels = warp_labels(subject.labels, affine)
    return image, labels, affine


# --- dataset on disk --------------------------------------------------------


def write_dataset(root, num_subjects, shape=(64, 64), base_seed=0):
    """Layout: subjects/<id>/mod<k>.kmt, labels.kmt, meta.json."""
    root = Path(root)
    for i in range(num_subjects):
        subject = generate_subject(base_seed + i, shape)
        sdir = root / "subjects" / f"{i:04d}"
        sdir.mkdir(parents=True, exist_ok=True)
        for k, img in enumerate(subject.images):
            tc.write_kmt(sdir / f"mod{k}.kmt", img.data.astype(np.float32))
        tc.write_kmt(sdir / "labels.kmt", subject.labels.data.astype(np.uint8), dtype_code=1)
        with open(sdir / "meta.json", "w") as f:
            json.dump({"seed": base_seed + i, "shape": list(shape)}, f)
    with open(root / "meta.json", "w") as f:
        json.dump(
            {
                "num_subjects": num_subjects,
                "shape": list(shape),
                "base_seed": base_seed,
                "modalities": NUM_MODALITIES,
            },
            f,
        )
    return root


def load_dataset(root):
    """Returns a list of dicts with modalities, labels, and one-hot labels."""
    root = Path(root)
    subjects = []
    for sdir in sorted((root / "subjects").iterdir()):
        mods = []
        k = 0
        while (sdir / f"mod{k}.kmt").exists():
            mods.append(tc.read_kmt(sdir / f"mod{k}.kmt"))
            k += 1
        labels = LabelMap(tc.read_kmt(sdir / "labels.kmt").astype(np.int64))
        onehot = (
            np.arange(NUM_LABELS).reshape((NUM_LABELS,) + (1,) * labels.data.ndim)
            == labels.data[None]
        ).astype(np.float64)
        subjects.append({"id": sdir.name, "modalities": mods, "labels": labels, "onehot": onehot})
    return subjects


def split_dataset(num_subjects, split_seed=0, fractions=(0.7, 0.1, 0.2)):
    """Deterministic (train, val, test) index partition."""
    rng = np.random.default_rng(split_seed)
    order = rng.permutation(num_subjects)
    n_train = int(round(fractions[0] * num_subjects))
    n_val = int(round(fractions[1] * num_subjects))
    return (
        sorted(order[:n_train].tolist()),
        sorted(order[n_train : n_train + n_val].tolist()),
        sorted(order[n_train + n_val :].tolist()),
    )
