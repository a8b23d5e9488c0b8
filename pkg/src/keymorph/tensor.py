"""Dense tensor I/O and small dense linear-algebra kernels.

Everything downstream works on plain float64 numpy arrays in row-major
layout. On disk, tensors use the KMT binary format: magic ``KMTENSR1``,
a u8 dtype code (0 = f32, 1 = u8), u8 ndim, ndim little-endian u64
extents, then the row-major payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch, SingularMatrix

KMT_MAGIC = b"KMTENSR1"

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODE_FOR_KIND = {"f": 0, "u": 1, "i": 1}


def write_kmt(path, array, dtype_code=None):
    """Write an array to a KMT file. Floats are stored as f32."""
    arr = np.asarray(array)
    if dtype_code is None:
        dtype_code = _CODE_FOR_KIND.get(arr.dtype.kind, 0)
    dt = _DTYPE_CODES[dtype_code]
    path = Path(path)
    with open(path, "wb") as f:
        f.write(KMT_MAGIC)
        f.write(struct.pack("<BB", dtype_code, arr.ndim))
        for extent in arr.shape:
            f.write(struct.pack("<Q", extent))
        f.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return path


def read_kmt(path):
    """Read a KMT file. f32 payloads are promoted to float64 in memory."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != KMT_MAGIC:
            raise ValueError(f"not a KMT file: {path!r} (magic {magic!r})")
        dtype_code, ndim = struct.unpack("<BB", f.read(2))
        if dtype_code not in _DTYPE_CODES:
            raise ValueError(f"unknown KMT dtype code {dtype_code}")
        shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim)) if ndim else ()
        dt = _DTYPE_CODES[dtype_code]
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(f.read(count * dt.itemsize), dtype=dt)
    arr = data.reshape(shape)
    if dtype_code == 0:
        arr = arr.astype(np.float64)
    return arr


def matmul(a, b):
    """Matrix product with an explicit inner-dimension check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul expects 2-D operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def lu_factor(m):
    """LU with partial pivoting. Returns (LU, piv) in LAPACK-style packing.

    Raises SingularMatrix when a pivot falls below 1e-12 * max|M|, which
    upstream callers treat as a degenerate keypoint configuration.
    """
    lu = np.array(m, dtype=np.float64)
    n = lu.shape[0]
    if lu.ndim != 2 or lu.shape[1] != n:
        raise ShapeMismatch(f"expected a square matrix, got {lu.shape}")
    piv = np.arange(n)
    scale = np.max(np.abs(lu)) if n else 0.0
    tol = 1e-12 * scale
    for k in range(n):
        j = k + int(np.argmax(np.abs(lu[k:, k])))
        if abs(lu[j, k]) <= tol:
            raise SingularMatrix(f"pivot {abs(lu[j, k]):.3e} below threshold {tol:.3e} at column {k}")
        if j != k:
            lu[[k, j]] = lu[[j, k]]
            piv[[k, j]] = piv[[j, k]]
        lu[k + 1:, k] /= lu[k, k]
        lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return lu, piv


def lu_solve(lu, piv, b):
    """Solve using a factorization from lu_factor."""
    b = np.asarray(b, dtype=np.float64)
    squeeze = b.ndim == 1
    x = b.reshape(len(b), -1)[piv].copy()
    n = lu.shape[0]
    for k in range(1, n):
        x[k] -= lu[k, :k] @ x[:k]
    for k in range(n - 1, -1, -1):
        x[k] -= lu[k, k + 1:] @ x[k + 1:]
        x[k] /= lu[k, k]
    return x[:, 0] if squeeze else x


def solve_linear(m, b):
    """Solve M X = B by partial-pivot LU.

    M must be square with B matching its row count. Raises SingularMatrix
    for near-singular systems.
    """
    m = np.asarray(m, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeMismatch(f"M must be square, got {m.shape}")
    if b.shape[0] != m.shape[0]:
        raise ShapeMismatch(f"B rows {b.shape[0]} != n {m.shape[0]}")
    lu, piv = lu_factor(m)
    return lu_solve(lu, piv, b)
