"""Closed-form affine and thin-plate-spline coordinate transformations.

Keypoints live in normalized [-1, 1] coordinates everywhere; voxel-unit
conversion happens only at I/O boundaries. Plain-numpy solvers live here
alongside differentiable graph builders (suffix ``_v``) that run on
autodiff Vars and share the same math.

The TPS radial kernel is U(r) = r^2 ln r with U(0) = 0 by continuity,
for D = 3 as well as D = 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import tensor as tc
from .errors import (
    DegenerateConfiguration,
    DuplicatePoints,
    ShapeMismatch,
    SingularMatrix,
)


@dataclass(frozen=True)
class KeypointSet:
    """N corresponding points in normalized coordinates, one per row."""

    points: np.ndarray  # (N, D)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise ShapeMismatch(f"points must be N x D, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ShapeMismatch("non-finite keypoint coordinates")
        object.__setattr__(self, "points", pts)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]


@dataclass(frozen=True)
class AffineParams:
    """A is D x (D+1); maps homogeneous-lifted points."""

    A: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.A, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != a.shape[0] + 1:
            raise ShapeMismatch(f"affine matrix must be D x (D+1), got {a.shape}")
        object.__setattr__(self, "A", a)

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def linear(self):
        return self.A[:, : self.d]

    @property
    def translation(self):
        return self.A[:, self.d]


@dataclass(frozen=True)
class TpsParams:
    W: np.ndarray  # (N, D) nonlinear coefficients
    A: np.ndarray  # (D+1, D) affine block (row form: out = [p, 1] @ A)
    control_points: KeypointSet
    lam: float

    @property
    def d(self):
        return self.A.shape[1]


@dataclass(frozen=True)
class TpsSystem:
    Psi: np.ndarray  # (N+D+1, N+D+1)
    Z: np.ndarray  # (N+D+1, D)


TransformParams = AffineParams | TpsParams


def _homogeneous(points):
    """Append a ones column: (N, D) -> (N, D+1)."""
    return np.hstack([points, np.ones((len(points), 1))])


def identity_affine(d):
    return AffineParams(np.hstack([np.eye(d), np.zeros((d, 1))]))


def compose_affine(outer: AffineParams, inner: AffineParams) -> AffineParams:
    """Affine of the map p -> outer(inner(p))."""
    lin = outer.linear @ inner.linear
    t = outer.linear @ inner.translation + outer.translation
    return AffineParams(np.hstack([lin, t[:, None]]))


def invert_affine(a: AffineParams) -> AffineParams:
    lin_inv = np.linalg.inv(a.linear)
    return AffineParams(np.hstack([lin_inv, (-lin_inv @ a.translation)[:, None]]))


def apply_affine(a: AffineParams, pts: KeypointSet) -> KeypointSet:
    if pts.d != a.d:
        raise ShapeMismatch(f"affine is {a.d}-D but points are {pts.d}-D")
    return KeypointSet(_homogeneous(pts.points) @ a.A.T)


def solve_affine(p: KeypointSet, q: KeypointSet) -> AffineParams:
    """Least-squares affine aligning p to q via the normal equations.

    Returns A = Q Pt^T (Pt Pt^T)^-1 in row form; raises
    DegenerateConfiguration for collinear/coplanar or too-few points.
    """
    if p.n != q.n or p.d != q.d:
        raise ShapeMismatch(f"keypoint sets disagree: {p.points.shape} vs {q.points.shape}")
    if p.n < p.d + 1:
        raise DegenerateConfiguration(f"need at least D+1 = {p.d + 1} points, got {p.n}")
    x = _homogeneous(p.points)  # (N, D+1)
    try:
        sol = tc.solve_linear(x.T @ x, x.T @ q.points)  # (D+1, D)
    except SingularMatrix as e:
        raise DegenerateConfiguration(f"singular normal equations: {e}") from e
    return AffineParams(sol.T)


def _pairwise_sqdist(a, b):
    return (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * a @ b.T
    )


def tps_u_from_sqdist(s):
    """U(r) expressed in squared distance: 0.5 s ln s, with U(0) = 0."""
    s = np.asarray(s, dtype=np.float64)
    out = np.zeros_like(s)
    pos = s > 1e-30
    out[pos] = 0.5 * s[pos] * np.log(s[pos])
    return out


def build_tps_system(p: KeypointSet, q: KeypointSet, lam: float) -> TpsSystem:
    """Assemble the symmetric block system [[K + lam I, L], [L^T, 0]]."""
    if p.n != q.n or p.d != q.d:
        raise ShapeMismatch(f"keypoint sets disagree: {p.points.shape} vs {q.points.shape}")
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    n, d = p.n, p.d
    sq = _pairwise_sqdist(p.points, p.points)
    if lam == 0.0:
        off = sq + np.eye(n)
        if np.any(off < 1e-18):
            raise DuplicatePoints("two source points coincide; Psi is singular at lambda = 0")
    k = tps_u_from_sqdist(sq) + lam * np.eye(n)
    ell = _homogeneous(p.points)  # (N, D+1)
    psi = np.zeros((n + d + 1, n + d + 1))
    psi[:n, :n] = k
    psi[:n, n:] = ell
    psi[n:, :n] = ell.T
    z = np.zeros((n + d + 1, d))
    z[:n] = q.points
    return TpsSystem(Psi=psi, Z=z)


def solve_tps(p: KeypointSet, q: KeypointSet, lam: float) -> TpsParams:
    sys = build_tps_system(p, q, lam)
    try:
        theta = tc.solve_linear(sys.Psi, sys.Z)
    except SingularMatrix as e:
        raise DegenerateConfiguration(f"singular TPS system: {e}") from e
    n = p.n
    return TpsParams(W=theta[:n], A=theta[n:], control_points=p, lam=float(lam))


def tps_apply(theta: TpsParams, pts: KeypointSet) -> KeypointSet:
    if pts.d != theta.d:
        raise ShapeMismatch(f"transform is {theta.d}-D but points are {pts.d}-D")
    u = tps_u_from_sqdist(_pairwise_sqdist(pts.points, theta.control_points.points))
    out = _homogeneous(pts.points) @ theta.A + u @ theta.W
    return KeypointSet(out)


def apply_transform(t: TransformParams, pts: KeypointSet) -> KeypointSet:
    if isinstance(t, AffineParams):
        return apply_affine(t, pts)
    return tps_apply(t, pts)


def bending_energy(theta: TpsParams) -> float:
    """trace(W^T K W) with K from the control points at lambda = 0."""
    k = tps_u_from_sqdist(
        _pairwise_sqdist(theta.control_points.points, theta.control_points.points)
    )
    e = float(np.trace(theta.W.T @ k @ theta.W))
    return max(e, 0.0)


def normalized_grid(grid_shape):
    """Cell-centered normalized coordinates of every voxel, (n_voxels, D)."""
    axes = [(-1.0 + 2.0 * (np.arange(n) + 0.5) / n) for n in grid_shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def dense_displacement(t: TransformParams, grid_shape):
    """Per-voxel T(g) - g in normalized coordinates, shape grid_shape + (D,)."""
    d = t.d if isinstance(t, AffineParams) else t.d
    if len(grid_shape) != d:
        raise ShapeMismatch(f"grid has {len(grid_shape)} extents but transform is {d}-D")
    g = normalized_grid(grid_shape)
    out = apply_transform(t, KeypointSet(g)).points - g
    return out.reshape(tuple(grid_shape) + (d,))


# --- serialization ---------------------------------------------------------


def transform_to_dict(t: TransformParams) -> dict:
    if isinstance(t, AffineParams):
        return {"kind": "affine", "A": t.A.tolist()}
    return {
        "kind": "tps",
        "W": t.W.tolist(),
        "A": t.A.tolist(),
        "control_points": t.control_points.points.tolist(),
        "lambda": t.lam,
    }


def transform_from_dict(d: dict) -> TransformParams:
    if d["kind"] == "affine":
        return AffineParams(np.array(d["A"], dtype=np.float64))
    if d["kind"] == "tps":
        return TpsParams(
            W=np.array(d["W"], dtype=np.float64),
            A=np.array(d["A"], dtype=np.float64),
            control_points=KeypointSet(np.array(d["control_points"], dtype=np.float64)),
            lam=float(d["lambda"]),
        )
    raise ValueError(f"unknown transform kind {d.get('kind')!r}")


def save_transform(path, t: TransformParams):
    with open(path, "w") as f:
        json.dump(transform_to_dict(t), f)


def load_transform(path) -> TransformParams:
    with open(path) as f:
        return transform_from_dict(json.load(f))


# --- differentiable graph builders ----------------------------------------


def homogeneous_v(p):
    ones = ad.Var(np.ones((p.value.shape[0], 1)), op="const")
    return ad.concat([p, ones], axis=1)


def pairwise_sqdist_v(a, b):
    aa = ad.vsum(a * a, axis=1, keepdims=True)  # (N, 1)
    bb = ad.reshape(ad.vsum(b * b, axis=1), (1, b.value.shape[0]))
    return aa + bb - 2.0 * (a @ ad.transpose(b))


def solve_affine_v(p, q):
    """Differentiable least-squares affine; returns the (D+1) x D row-form block."""
    x = homogeneous_v(p)
    xt = ad.transpose(x)
    return ad.solve(xt @ x, xt @ q)


def solve_tps_v(p, q, lam):
    """Differentiable TPS solve; returns theta (N+D+1, D) stacked [W; A]."""
    n, d = p.value.shape
    sq = pairwise_sqdist_v(p, p)
    k = ad.tps_kernel(sq) + ad.Var(lam * np.eye(n), op="const")
    ell = homogeneous_v(p)
    top = ad.concat([k, ell], axis=1)
    bottom = ad.concat([ad.transpose(ell), ad.Var(np.zeros((d + 1, d + 1)), op="const")], axis=1)
    psi = ad.concat([top, bottom], axis=0)
    z = ad.concat([q, ad.Var(np.zeros((d + 1, d)), op="const")], axis=0)
    return ad.solve(psi, z)


def affine_points_v(affine_block, pts):
    """pts (M, D) through the row-form affine block ((D+1) x D)."""
    return homogeneous_v(pts) @ affine_block


def tps_points_v(theta, control_p, pts):
    """pts (M, D) through stacked TPS parameters theta = [W; A]."""
    n = control_p.value.shape[0]
    w = theta[:n]
    a = theta[n:]
    u = ad.tps_kernel(pairwise_sqdist_v(pts, control_p))
    return homogeneous_v(pts) @ a + u @ w
