"""Reverse-mode gradient propagation on numpy arrays.

A Var wraps a float64 array plus references to its parents and a closure
that maps the output gradient to parent gradients. Graphs are built
eagerly and differentiated by a single reverse topological sweep.

Gradients through the closed-form linear solves use the adjoint rule
(dB = M^-T G, dM = -M^-T G X^T) rather than differentiating the
factorization; nearest-neighbor sampling is treated as constant.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .errors import NondeterministicFunction, NonScalarRoot, ShapeMismatch


class Var:
    __slots__ = ("value", "parents", "bwd", "grad", "op")

    def __init__(self, value, parents=(), bwd=None, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.bwd = bwd
        self.grad = None
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.value.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_var(x):
    return x if isinstance(x, Var) else Var(x, op="const")


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` after numpy broadcasting."""
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = as_var(a), as_var(b)
    out = Var(a.value + b.value, (a, b), op="add")
    out.bwd = lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape))
    return out


def sub(a, b):
    a, b = as_var(a), as_var(b)
    out = Var(a.value - b.value, (a, b), op="sub")
    out.bwd = lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape))
    return out


def mul(a, b):
    a, b = as_var(a), as_var(b)
    out = Var(a.value * b.value, (a, b), op="mul")
    out.bwd = lambda g: (
        _unbroadcast(g * b.value, a.value.shape),
        _unbroadcast(g * a.value, b.value.shape),
    )
    return out


def div(a, b):
    a, b = as_var(a), as_var(b)
    out = Var(a.value / b.value, (a, b), op="div")
    out.bwd = lambda g: (
        _unbroadcast(g / b.value, a.value.shape),
        _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
    )
    return out


def exp(a):
    a = as_var(a)
    out = Var(np.exp(a.value), (a,), op="exp")
    out.bwd = lambda g: (g * out.value,)
    return out


def log(a):
    a = as_var(a)
    out = Var(np.log(a.value), (a,), op="log")
    out.bwd = lambda g: (g / a.value,)
    return out


def sin(a):
    a = as_var(a)
    out = Var(np.sin(a.value), (a,), op="sin")
    out.bwd = lambda g: (g * np.cos(a.value),)
    return out


def cos(a):
    a = as_var(a)
    out = Var(np.cos(a.value), (a,), op="cos")
    out.bwd = lambda g: (-g * np.sin(a.value),)
    return out


def sqrt(a):
    a = as_var(a)
    out = Var(np.sqrt(a.value), (a,), op="sqrt")
    out.bwd = lambda g: (g * 0.5 / out.value,)
    return out


def relu(a):
    """Subgradient at 0 is defined as 0."""
    a = as_var(a)
    mask = a.value > 0
    out = Var(np.where(mask, a.value, 0.0), (a,), op="relu")
    out.bwd = lambda g: (g * mask,)
    return out


def vsum(a, axis=None, keepdims=False):
    a = as_var(a)
    out = Var(a.value.sum(axis=axis, keepdims=keepdims), (a,), op="sum")

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.value.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    out.bwd = bwd
    return out


def vmean(a, axis=None, keepdims=False):
    a = as_var(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return vsum(a, axis=axis, keepdims=keepdims) / float(n)


def matmul(a, b):
    a, b = as_var(a), as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeMismatch(f"matmul: {a.value.shape} x {b.value.shape}")
    out = Var(a.value @ b.value, (a, b), op="matmul")
    out.bwd = lambda g: (g @ b.value.T, a.value.T @ g)
    return out


def transpose(a):
    a = as_var(a)
    out = Var(a.value.T, (a,), op="transpose")
    out.bwd = lambda g: (g.T,)
    return out


def reshape(a, shape):
    a = as_var(a)
    out = Var(a.value.reshape(shape), (a,), op="reshape")
    out.bwd = lambda g: (g.reshape(a.value.shape),)
    return out


def getitem(a, idx):
    a = as_var(a)
    out = Var(a.value[idx], (a,), op="getitem")

    def bwd(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, idx, g)
        return (ga,)

    out.bwd = bwd
    return out


def concat(parts, axis=0):
    parts = [as_var(p) for p in parts]
    out = Var(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), op="concat")
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    out.bwd = lambda g: tuple(np.split(g, splits, axis=axis))
    return out


def solve(m, b):
    """X = M^-1 B with adjoint-rule gradients through the solve."""
    m, b = as_var(m), as_var(b)
    x = tc.solve_linear(m.value, b.value)
    out = Var(x, (m, b), op="solve")

    def bwd(g):
        g2 = g.reshape(len(g), -1)
        x2 = x.reshape(len(x), -1)
        gb = tc.solve_linear(m.value.T, g2)
        gm = -gb @ x2.T
        return (gm, gb.reshape(b.value.shape))

    out.bwd = bwd
    return out


def tps_kernel(s):
    """U as a function of squared distance s: r^2 ln r = 0.5 s ln s, U(0)=0.

    The zero-distance entries sit on constant diagonals (a point against
    itself), so their masked-out gradient is exact.
    """
    s = as_var(s)
    pos = s.value > 1e-30
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(pos, 0.5 * s.value * np.log(np.where(pos, s.value, 1.0)), 0.0)
        dval = np.where(pos, 0.5 * (np.log(np.where(pos, s.value, 1.0)) + 1.0), 0.0)
    out = Var(val, (s,), op="tps_kernel")
    out.bwd = lambda g: (g * dval,)
    return out


def conv_nd(x, w, bias=None, stride=1, pad=None):
    """N-D convolution (cross-correlation) with zero padding.

    x: (C_in, *spatial); w: (C_out, C_in, *k); bias: (C_out,) or None.
    pad defaults to k//2 ("same" extents at stride 1, exact halving for
    even extents at stride 2 with k=3).
    """
    x, w = as_var(x), as_var(w)
    ksize = w.value.shape[2:]
    nd = len(ksize)
    if x.value.ndim != nd + 1 or x.value.shape[0] != w.value.shape[1]:
        raise ShapeMismatch(f"conv: x {x.value.shape} vs w {w.value.shape}")
    if pad is None:
        pad = ksize[0] // 2
    spatial = x.value.shape[1:]
    out_spatial = tuple((n + 2 * pad - k) // stride + 1 for n, k in zip(spatial, ksize))

    pad_width = [(0, 0)] + [(pad, pad)] * nd
    xp = np.pad(x.value, pad_width)

    cout = w.value.shape[0]
    outv = np.zeros((cout,) + out_spatial)
    offsets = list(itertools.product(*[range(k) for k in ksize]))
    slices = {}
    for off in offsets:
        sl = (slice(None),) + tuple(
            slice(o, o + stride * m, stride) for o, m in zip(off, out_spatial)
        )
        slices[off] = sl
        outv += np.tensordot(w.value[(slice(None), slice(None)) + off], xp[sl], axes=([1], [0]))

    parents = [x, w]
    if bias is not None:
        bias = as_var(bias)
        outv = outv + bias.value.reshape((cout,) + (1,) * nd)
        parents.append(bias)

    out = Var(outv, tuple(parents), op="conv")
    spatial_axes = tuple(range(1, nd + 1))

    def bwd(g):
        gx_p = np.zeros_like(xp)
        gw = np.zeros_like(w.value)
        for off in offsets:
            sl = slices[off]
            # (C_out, *out) x (C_in, *out) -> (C_out, C_in)
            gw[(slice(None), slice(None)) + off] = np.tensordot(
                g, xp[sl], axes=(spatial_axes, spatial_axes)
            )
            gx_p[sl] += np.tensordot(w.value[(slice(None), slice(None)) + off], g, axes=([0], [0]))
        crop = (slice(None),) + tuple(slice(pad, pad + n) for n in spatial)
        grads = [gx_p[crop], gw]
        if bias is not None:
            grads.append(g.sum(axis=spatial_axes))
        return tuple(grads)

    out.bwd = bwd
    return out


def instance_norm(x, eps=1e-5):
    """Per-channel normalization over spatial axes; x is (C, *spatial)."""
    x = as_var(x)
    axes = tuple(range(1, x.value.ndim))
    mu = vmean(x, axis=None) if not axes else _mean_over(x, axes)
    centered = x - mu
    var = _mean_over(mul(centered, centered), axes)
    return centered / sqrt(var + eps)


def _mean_over(x, axes):
    out = x
    for ax in sorted(axes):
        out = vmean(out, axis=ax, keepdims=True)
    return out


def grid_sample(img, coords, mode="linear", padding="zeros"):
    """Sample img (C, *spatial) at normalized coords (M, D) -> (C, M).

    Normalized convention is cell-centered: index = (c + 1) / 2 * n - 0.5.
    Linear mode is differentiable in both img and coords; nearest mode
    propagates zero gradient to coords and exact scatter to img.
    """
    img, coords = as_var(img), as_var(coords)
    spatial = img.value.shape[1:]
    nd = len(spatial)
    if coords.value.ndim != 2 or coords.value.shape[1] != nd:
        raise ShapeMismatch(f"coords {coords.value.shape} vs image spatial {spatial}")
    c = coords.value
    ns = np.array(spatial, dtype=np.float64)
    idx = (c + 1.0) / 2.0 * ns - 0.5  # (M, D) fractional voxel indices

    if mode == "nearest":
        ii = np.rint(idx).astype(np.int64)
        inside = np.all((ii >= 0) & (ii < np.array(spatial)), axis=1)
        ic = np.clip(ii, 0, np.array(spatial) - 1)
        flat = np.ravel_multi_index(tuple(ic.T), spatial)
        vals = img.value.reshape(img.value.shape[0], -1)[:, flat]
        if padding == "zeros":
            vals = vals * inside
        out = Var(vals, (img, coords), op="grid_sample_nearest")

        def bwd_n(g):
            gi = np.zeros_like(img.value).reshape(img.value.shape[0], -1)
            gm = g * inside if padding == "zeros" else g
            np.add.at(gi.T, flat, gm.T)
            return (gi.reshape(img.value.shape), np.zeros_like(coords.value))

        out.bwd = bwd_n
        return out

    lo = np.floor(idx).astype(np.int64)  # (M, D)
    frac = idx - lo
    corners = list(itertools.product((0, 1), repeat=nd))
    cn = img.value.shape[0]
    m = c.shape[0]
    vals = np.zeros((cn, m))
    cache = []
    img_flat = img.value.reshape(cn, -1)
    for corner in corners:
        ci = lo + np.array(corner)  # (M, D)
        if padding == "border":
            cc = np.clip(ci, 0, np.array(spatial) - 1)
            valid = np.ones(m)
        else:
            valid = np.all((ci >= 0) & (ci < np.array(spatial)), axis=1).astype(np.float64)
            cc = np.clip(ci, 0, np.array(spatial) - 1)
        wgt = np.ones(m)
        for d in range(nd):
            wgt = wgt * (frac[:, d] if corner[d] else 1.0 - frac[:, d])
        flat = np.ravel_multi_index(tuple(cc.T), spatial)
        v = img_flat[:, flat] * valid
        vals += v * wgt
        cache.append((corner, flat, valid, wgt, v))

    out = Var(vals, (img, coords), op="grid_sample")
    scale = ns / 2.0  # d(index)/d(normalized coord)

    def bwd(g):
        gi = np.zeros((cn, int(np.prod(spatial))))
        gc = np.zeros_like(coords.value)
        for corner, flat, valid, wgt, v in cache:
            np.add.at(gi.T, flat, (g * (wgt * valid)).T)
            gv = (g * v).sum(axis=0)  # (M,)
            for d in range(nd):
                dw = np.ones(m)
                for dd in range(nd):
                    if dd == d:
                        dw = dw * (1.0 if corner[dd] else -1.0)
                    else:
                        dw = dw * (frac[:, dd] if corner[dd] else 1.0 - frac[:, dd])
                gc[:, d] += gv * dw * scale[d]
        return (gi.reshape(img.value.shape), gc)

    out.bwd = bwd
    return out


def backward(root, leaves=None):
    """Populate .grad on every node reachable from root.

    root must hold a single scalar. Returns a dict mapping each node in
    `leaves` (default: all reachable leaf nodes) to its gradient;
    unreachable requested leaves get zeros.
    """
    if np.asarray(root.value).size != 1:
        raise NonScalarRoot(f"root has shape {np.shape(root.value)}")

    topo, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))

    for node in topo:
        node.grad = None
    root.grad = np.ones_like(np.asarray(root.value, dtype=np.float64))
    for node in reversed(topo):
        if node.grad is None or node.bwd is None:
            continue
        for parent, g in zip(node.parents, node.bwd(node.grad)):
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                parent.grad = parent.grad + g

    if leaves is None:
        leaves = [n for n in topo if not n.parents and n.op == "leaf"]
    return {
        leaf: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
        for leaf in leaves
    }


@dataclass
class GradcheckReport:
    max_rel_err: float
    passed: bool
    per_input: list


def gradcheck(f, inputs, h=1e-5, tol=1e-3, max_elems=None, rng=None):
    """Compare backward() against central finite differences.

    f takes a list of Var leaves and returns a scalar Var. When
    max_elems is set, a seeded random subset of entries per input is
    probed (for large weight tensors).
    """
    arrays = [np.asarray(x, dtype=np.float64) for x in inputs]

    def run(vals):
        leaves = [Var(v) for v in vals]
        return f(leaves), leaves

    out1, leaves = run(arrays)
    out2, _ = run(arrays)
    if not np.allclose(out1.value, out2.value, rtol=0, atol=0):
        raise NondeterministicFunction("two evaluations at identical inputs differ")

    grads = backward(out1, leaves=leaves)
    rng = rng or np.random.default_rng(0)

    max_err = 0.0
    per_input = []
    for i, arr in enumerate(arrays):
        ana = grads[leaves[i]]
        flat_idx = np.arange(arr.size)
        if max_elems is not None and arr.size > max_elems:
            flat_idx = rng.choice(arr.size, size=max_elems, replace=False)
        worst = 0.0
        for j in flat_idx:
            pos = arrays[i].copy().ravel()
            pos[j] += h
            neg = arrays[i].copy().ravel()
            neg[j] -= h
            vals_p = [a if k != i else pos.reshape(arr.shape) for k, a in enumerate(arrays)]
            vals_n = [a if k != i else neg.reshape(arr.shape) for k, a in enumerate(arrays)]
            fp, _ = run(vals_p)
            fn, _ = run(vals_n)
            num = (float(fp.value) - float(fn.value)) / (2 * h)
            a = float(ana.ravel()[j])
            err = abs(a - num) / max(1e-8, abs(a), abs(num))
            worst = max(worst, err)
        per_input.append(worst)
        max_err = max(max_err, worst)
    return GradcheckReport(max_rel_err=max_err, passed=max_err <= tol, per_input=per_input)
