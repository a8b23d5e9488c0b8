"""Training regimes for the keypoint detector.

Three regimes: supervised (soft-Dice on warped one-hot labels),
unsupervised (alternating cross-subject MSE batches and same-subject
cross-modality keypoint-deviation batches), and self-supervised
pretraining against synthetically transformed copies of one subject.

Direction convention throughout: the transform is solved with the fixed
keypoints as source and moving keypoints as target, so it carries
fixed-grid coordinates into moving-image coordinates for resampling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import autodiff as ad
from . import detector as det
from .errors import DivergedLoss, ShapeMismatch
from .transforms import (
    AffineParams,
    KeypointSet,
    affine_points_v,
    compose_affine,
    identity_affine,
    invert_affine,
    normalized_grid,
    solve_affine_v,
    solve_tps_v,
    tps_points_v,
)
from .warp import Image


# --- sampling policies ------------------------------------------------------


@dataclass
class AugmentationRanges:
    """Uniform sampling ranges for the augmentation affine.

    translation_voxels is stated at the reference extent and rescaled
    proportionally at other resolutions, preserving relative magnitude.
    """

    rotation_deg: float = 180.0
    translation_voxels: float = 15.0
    reference_extent: int = 256
    scale: tuple = (0.8, 1.2)
    shear: tuple = (-0.1, 0.1)

    @classmethod
    def identity(cls):
        return cls(rotation_deg=0.0, translation_voxels=0.0, scale=(1.0, 1.0), shear=(0.0, 0.0))

    def to_dict(self):
        return asdict(self)


@dataclass
class LambdaDistribution:
    kind: str = "log_uniform"  # fixed | log_uniform
    value: float = 0.0
    exp_lo: float = -4.0
    exp_hi: float = 1.0

    def __post_init__(self):
        if self.kind == "fixed" and self.value < 0:
            raise ValueError("fixed lambda must be nonnegative")
        if self.kind == "log_uniform" and not self.exp_lo < self.exp_hi:
            raise ValueError("exp_lo must be < exp_hi")


def _rotation_matrix(d, angles_rad):
    if d == 2:
        c, s = np.cos(angles_rad[0]), np.sin(angles_rad[0])
        return np.array([[c, -s], [s, c]])
    r = np.eye(3)
    for axis, ang in enumerate(angles_rad):
        c, s = np.cos(ang), np.sin(ang)
        m = np.eye(3)
        i, j = [k for k in range(3) if k != axis]
        m[i, i], m[i, j], m[j, i], m[j, j] = c, -s, s, c
        r = m @ r
    return r


def sample_augmentation(rng, ranges: AugmentationRanges, d: int = 2) -> AffineParams:
    """Compose rotation * shear * scale, then translation, all uniform."""
    n_angles = 1 if d == 2 else 3
    angles = np.deg2rad(rng.uniform(-ranges.rotation_deg, ranges.rotation_deg, n_angles))
    rot = _rotation_matrix(d, angles)
    shear = np.eye(d)
    off = [(i, j) for i in range(d) for j in range(d) if i != j]
    for i, j in off:
        shear[i, j] = rng.uniform(*ranges.shear)
    scale = np.diag(rng.uniform(ranges.scale[0], ranges.scale[1], d))
    lin = rot @ shear @ scale
    t_norm = 2.0 * ranges.translation_voxels / ranges.reference_extent
    t = rng.uniform(-t_norm, t_norm, d)
    return AffineParams(np.hstack([lin, t[:, None]]))


def sample_lambda(rng, dist: LambdaDistribution) -> float:
    if dist.kind == "fixed":
        return float(dist.value)
    return float(10.0 ** rng.uniform(dist.exp_lo, dist.exp_hi))


# --- nonlinear warps --------------------------------------------------------


def _compose_displacement(u, grid):
    """u <- u(g + u(g)) + u(g) for a displacement field u of shape grid+(D,)."""
    shape = u.shape[:-1]
    d = u.shape[-1]
    pts = grid + u.reshape(-1, d)
    comp = sample_displacement(u, pts)
    return u + comp.reshape(u.shape)


def sample_displacement(phi, points):
    """Linearly interpolate a displacement field at normalized points (M, D)."""
    shape = phi.shape[:-1]
    d = phi.shape[-1]
    img_var = ad.Var(np.moveaxis(phi, -1, 0), op="const")  # (D, *spatial)
    out = ad.grid_sample(img_var, ad.Var(points, op="const"), mode="linear", padding="border")
    return out.value.T  # (M, D)


def random_nonlinear_warp(rng, grid_shape, magnitude=0.1, smoothness=4.0, steps=6):
    """Smooth random displacement from an integrated stationary velocity field.

    Returns phi of shape grid_shape + (D,) in normalized units such that
    a point y maps to y + phi(y).
    """
    grid_shape = tuple(grid_shape)
    d = len(grid_shape)
    if magnitude == 0.0:
        return np.zeros(grid_shape + (d,))
    v = rng.standard_normal(grid_shape + (d,))
    for axis in range(d):
        v[..., axis] = gaussian_filter(v[..., axis], sigma=smoothness, mode="nearest")
    peak = np.max(np.linalg.norm(v, axis=-1))
    v *= magnitude / peak
    u = v / (2.0**steps)
    grid = normalized_grid(grid_shape)
    for _ in range(steps):
        u = _compose_displacement(u, grid)
    return u


def apply_displacement_to_points(phi, points):
    return points + sample_displacement(phi, points)


# --- losses -----------------------------------------------------------------


def mse_v(pred, target):
    diff = pred - target
    return ad.vmean(diff * diff)


def soft_dice_v(pred, target, eps=1e-6):
    """1 - mean over labels of the soft-Dice overlap; inputs (L, *spatial)."""
    nl = pred.value.shape[0]
    axes = tuple(range(1, pred.value.ndim))
    inter = pred * target
    num = 2.0 * _sum_over(inter, axes) + eps
    den = _sum_over(pred, axes) + _sum_over(target, axes) + eps
    return 1.0 - ad.vmean(num / den)


def _sum_over(x, axes):
    out = x
    for ax in sorted(axes, reverse=True):
        out = ad.vsum(out, axis=ax)
    return out


def similarity_loss(pred, target, mode="mse"):
    """Plain-number similarity loss; see mse_v / soft_dice_v for the graph form."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeMismatch(f"{p.shape} vs {t.shape}")
    if mode == "mse":
        return float(np.mean((p - t) ** 2))
    if mode == "soft_dice":
        return float(soft_dice_v(ad.Var(p, op="const"), ad.Var(t, op="const")).value)
    raise ValueError(f"unknown mode {mode!r}")


def keypoint_consistency_loss_v(k1, k2):
    diff = k1 - k2
    return ad.sqrt(ad.vsum(diff * diff))


def keypoint_consistency_loss(k1: KeypointSet, k2: KeypointSet) -> float:
    if k1.points.shape != k2.points.shape:
        raise ShapeMismatch(f"{k1.points.shape} vs {k2.points.shape}")
    return float(np.linalg.norm(k1.points - k2.points))


# --- optimizer --------------------------------------------------------------


class Adam:
    """Adaptive-moment gradient descent over a named parameter dict."""

    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        for name, g in grads.items():
            if g is None:
                continue
            m = self.m.setdefault(name, np.zeros_like(params[name]))
            v = self.v.setdefault(name, np.zeros_like(params[name]))
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mh = m / (1 - self.b1**self.t)
            vh = v / (1 - self.b2**self.t)
            params[name] -= self.lr * mh / (np.sqrt(vh) + self.eps)


# --- image-side augmentation helpers ---------------------------------------


def _resample(image_data, coords_flat):
    var = ad.grid_sample(
        ad.Var(image_data[None], op="const"),
        ad.Var(coords_flat, op="const"),
        mode="linear",
        padding="zeros",
    )
    return var.value[0].reshape(image_data.shape)


def push_image_affine(image_data, a: AffineParams):
    """Move image content by the affine a (resamples with its inverse)."""
    grid = normalized_grid(image_data.shape)
    inv = invert_affine(a)
    coords = np.hstack([grid, np.ones((len(grid), 1))]) @ inv.A.T
    return _resample(image_data, coords)


def push_image_affine_then_warp(image_data, a: AffineParams, phi_inv):
    """Content moves by phi(A(p)); resampling goes through A^-1(phi^-1(g))."""
    grid = normalized_grid(image_data.shape)
    pts = grid + sample_displacement(phi_inv, grid)
    inv = invert_affine(a)
    coords = np.hstack([pts, np.ones((len(pts), 1))]) @ inv.A.T
    return _resample(image_data, coords)


# --- pretraining ------------------------------------------------------------


@dataclass
class PretrainSettings:
    magnitude: float = 0.1
    smoothness_divisor: float = 16.0  # sigma = extent / divisor
    # base keypoints stay well inside [-1, 1] so their rotated images remain
    # representable by the center-of-mass head
    keypoint_margin: float = 0.4
    lr: float = 5e-3
    lr_decay: float = 1.0  # multiplicative factor reached at the final step
    warmup_frac: float = 0.5  # fraction of steps over which pose ranges ramp up
    poses_per_step: int = 4  # independent poses per optimizer update


def _scaled_ranges(ranges: AugmentationRanges, ramp: float) -> AugmentationRanges:
    """Interpolate augmentation ranges between identity (ramp 0) and full (1)."""
    return AugmentationRanges(
        rotation_deg=ranges.rotation_deg * ramp,
        translation_voxels=ranges.translation_voxels * ramp,
        reference_extent=ranges.reference_extent,
        scale=(1.0 + (ranges.scale[0] - 1.0) * ramp, 1.0 + (ranges.scale[1] - 1.0) * ramp),
        shear=(ranges.shear[0] * ramp, ranges.shear[1] * ramp),
    )


def pretrain(weights, images, steps, rng, ranges=None, settings=None, trace=None):
    """Self-supervised pretraining on one subject's aligned multi-modal images.

    Per step: draw an affine and a smooth nonlinear warp, move every
    modality image and the base keypoints through them, and regress the
    detector output onto the moved keypoints. Mutates and returns weights.
    """
    settings = settings or PretrainSettings()
    ranges = ranges or AugmentationRanges()
    cfg = weights.config
    imgs = [
        np.asarray(img, dtype=np.float64)
        if isinstance(img, np.ndarray)
        else np.asarray(img.data, dtype=np.float64)
        for img in images
    ]
    shape = imgs[0].shape
    p0 = rng.uniform(-settings.keypoint_margin, settings.keypoint_margin, (cfg.num_keypoints, cfg.d))
    opt = Adam(lr=settings.lr)
    sigma = shape[0] / settings.smoothness_divisor

    warm = max(1, int(settings.warmup_frac * steps))
    for step in range(steps):
        # pose difficulty ramps up over the warmup portion; starting at the
        # full range leaves the predict-the-centroid minimum inescapable
        ramp = min(1.0, (step + 1) / warm)
        opt.lr = settings.lr * settings.lr_decay ** (step / max(1, steps - 1))
        loss = None
        param_vars = {k: ad.Var(v) for k, v in weights.params.items()}
        wvar = det.DetectorWeights(config=cfg, params=param_vars, seed=weights.seed)
        for _ in range(max(1, settings.poses_per_step)):
            aug = sample_augmentation(rng, _scaled_ranges(ranges, ramp), cfg.d)
            mag = settings.magnitude * ramp
            v_seed = rng.integers(0, 2**31)
            phi = random_nonlinear_warp(np.random.default_rng(v_seed), shape,
                                        magnitude=mag, smoothness=sigma)
            phi_inv = random_nonlinear_warp(np.random.default_rng(v_seed), shape,
                                            magnitude=-mag, smoothness=sigma)
            moved_p = apply_displacement_to_points(
                phi, np.hstack([p0, np.ones((len(p0), 1))]) @ aug.A.T
            )
            target = ad.Var(moved_p, op="const")
            for img in imgs:
                moved_img = push_image_affine_then_warp(img, aug, phi_inv)
                kp, _ = det.forward(wvar, moved_img)
                diff = kp - target
                term = ad.vsum(diff * diff)
                loss = term if loss is None else loss + term
        lval = float(loss.value)
        if not np.isfinite(lval):
            raise DivergedLoss(f"pretraining loss became {lval} at step {step}")
        if trace is not None:
            trace.append(lval)
        ad.backward(loss)
        grads = {k: v.grad for k, v in param_vars.items()}
        opt.step(weights.params, grads)
    return weights


# --- main training step -----------------------------------------------------


@dataclass
class TrainPair:
    kind: str  # cross_subject | cross_modality
    moving: np.ndarray
    fixed: np.ndarray
    moving_onehot: np.ndarray | None = None  # (L, *spatial), supervised only
    fixed_onehot: np.ndarray | None = None
    # cross-modality only: the pose applied to the moving render; keypoints
    # of the fixed render are carried through it before comparison
    aug: AffineParams | None = None


@dataclass
class TransformSpec:
    kind: str = "tps"  # affine | tps
    lam: float | None = None
    lambda_dist: LambdaDistribution | None = None

    def draw_lambda(self, rng):
        if self.kind == "affine":
            return None
        if self.lam is not None:
            return float(self.lam)
        dist = self.lambda_dist or LambdaDistribution()
        return sample_lambda(rng, dist)


def _registration_loss(wvar, pair: TrainPair, lam, spec: TransformSpec, variant):
    kp_m, _ = det.forward(wvar, pair.moving)
    kp_f, _ = det.forward(wvar, pair.fixed)
    grid = ad.Var(normalized_grid(pair.fixed.shape), op="const")
    # arguments switched: source = fixed keypoints, target = moving keypoints
    if spec.kind == "affine":
        block = solve_affine_v(kp_f, kp_m)
        coords = affine_points_v(block, grid)
    else:
        theta = solve_tps_v(kp_f, kp_m, lam)
        coords = tps_points_v(theta, kp_f, grid)

    if variant == "supervised":
        moved = ad.grid_sample(
            ad.Var(pair.moving_onehot, op="const"), coords, mode="linear", padding="zeros"
        )
        pred = ad.reshape(moved, pair.moving_onehot.shape[:1] + pair.fixed.shape)
        return soft_dice_v(pred, ad.Var(pair.fixed_onehot, op="const"))
    moved = ad.grid_sample(
        ad.Var(pair.moving[None], op="const"), coords, mode="linear", padding="zeros"
    )
    pred = ad.reshape(moved, pair.fixed.shape)
    return mse_v(pred, ad.Var(pair.fixed, op="const"))


def train_step(weights, pairs, variant, spec: TransformSpec, rng, opt: Adam):
    """One gradient update over a batch of pairs; returns the mean loss."""
    if isinstance(pairs, TrainPair):
        pairs = [pairs]
    param_vars = {k: ad.Var(v) for k, v in weights.params.items()}
    wvar = det.DetectorWeights(config=weights.config, params=param_vars, seed=weights.seed)

    loss = None
    for pair in pairs:
        if pair.kind == "cross_modality":
            kp1, _ = det.forward(wvar, pair.moving)
            kp2, _ = det.forward(wvar, pair.fixed)
            if pair.aug is not None:
                # the moving render was posed; the fixed render's keypoints
                # must land on the posed positions. Comparing un-posed
                # keypoints would make a collapsed detector (every keypoint
                # at one spot) a global minimum of this term.
                block = ad.Var(
                    np.vstack([pair.aug.A[:, :-1].T, pair.aug.A[:, -1]]), op="const"
                )
                kp2 = affine_points_v(block, kp2)
            term = keypoint_consistency_loss_v(kp1, kp2)
        else:
            lam = spec.draw_lambda(rng)
            term = _registration_loss(wvar, pair, lam, spec, variant)
        loss = term if loss is None else loss + term
    loss = loss * (1.0 / len(pairs))

    lval = float(loss.value)
    if not np.isfinite(lval):
        raise DivergedLoss(f"training loss became {lval}")
    ad.backward(loss)
    opt.step(weights.params, {k: v.grad for k, v in param_vars.items()})
    return lval


# --- training loop ----------------------------------------------------------


@dataclass
class TrainConfig:
    variant: str = "unsupervised"  # supervised | unsupervised
    transform: TransformSpec = field(default_factory=TransformSpec)
    steps: int = 500
    seed: int = 0
    augmentation: AugmentationRanges = field(default_factory=AugmentationRanges)
    checkpoint_every: int = 0
    lr: float = 2e-3
    batch_size: int = 24  # pairs per optimizer update
    # misalignment difficulty ramps from identity to the full augmentation
    # ranges over this fraction of the run; starting at the full range puts
    # most pairs outside the similarity loss's alignment basin
    warmup_frac: float = 0.5

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "transform" in d:
            t = dict(d["transform"])
            if "lambda_dist" in t and t["lambda_dist"] is not None:
                t["lambda_dist"] = LambdaDistribution(**t["lambda_dist"])
            if "lambda" in t:
                t["lam"] = t.pop("lambda")
            d["transform"] = TransformSpec(**t)
        if "augmentation" in d:
            d["augmentation"] = AugmentationRanges(**d["augmentation"])
        return cls(**d)


def make_pair(dataset, variant, ranges, rng, step, consistency_ranges=None):
    """Draw the next training pair, alternating per the unsupervised schedule.

    dataset: list of subjects, each a dict with "modalities" (list of
    arrays) and "onehot" (one-hot labels, supervised only).
    consistency_ranges, when given, replaces ranges for the cross-modality
    batches; these carry no registration solve, so they can take the full
    pose distribution even while registration pairs are still ramping up.
    """
    n = len(dataset)
    d = dataset[0]["modalities"][0].ndim
    if variant == "unsupervised" and step % 2 == 1:
        # same-subject cross-modality pair; the pose goes on one side only
        # and the consistency loss compares through it
        si = int(rng.integers(n))
        m1, m2 = rng.choice(len(dataset[si]["modalities"]), 2, replace=False)
        aug = sample_augmentation(rng, consistency_ranges or ranges, d)
        x1 = push_image_affine(dataset[si]["modalities"][m1], aug)
        x2 = dataset[si]["modalities"][m2]
        return TrainPair(kind="cross_modality", moving=x1, fixed=x2, aug=aug)

    si, sj = rng.choice(n, 2, replace=False)
    mod = int(rng.integers(len(dataset[si]["modalities"])))
    aug = sample_augmentation(rng, ranges, d)
    moving = push_image_affine(dataset[si]["modalities"][mod], aug)
    fixed = dataset[sj]["modalities"][mod]
    pair = TrainPair(kind="cross_subject", moving=moving, fixed=fixed)
    if variant == "supervised":
        onehots = dataset[si]["onehot"]
        moved = np.stack([push_image_affine(ch, aug) for ch in onehots])
        pair.moving_onehot = moved
        pair.fixed_onehot = dataset[sj]["onehot"]
    return pair


def train(weights, dataset, config: TrainConfig, checkpoint_dir=None):
    """Run the training loop; returns (weights, loss trace)."""
    rng = np.random.default_rng(config.seed)
    opt = Adam(lr=config.lr)
    trace = []
    warm = max(1, int(config.warmup_frac * config.steps))
    for step in range(config.steps):
        ranges = _scaled_ranges(config.augmentation, min(1.0, (step + 1) / warm))
        pairs = [
            make_pair(dataset, config.variant, ranges, rng, step,
                      consistency_ranges=config.augmentation)
            for _ in range(max(1, config.batch_size))
        ]
        loss = train_step(weights, pairs, config.variant, config.transform, rng, opt)
        trace.append(loss)
        if (
            checkpoint_dir
            and config.checkpoint_every
            and (step + 1) % config.checkpoint_every == 0
        ):
            ckpt = Path(checkpoint_dir) / f"step{step + 1:06d}"
            det.save_weights(ckpt, weights)
            with open(ckpt / "loss_trace.json", "w") as f:
                json.dump(trace, f)
    return weights, trace
