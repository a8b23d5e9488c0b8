import numpy as np
import pytest

from keymorph import tensor as tc
from keymorph.errors import ShapeMismatch, SingularMatrix


def test_solve_identity():
    b = np.arange(6, dtype=float).reshape(3, 2)
    assert np.array_equal(tc.solve_linear(np.eye(3), b), b)


def test_solve_diagonal():
    x = tc.solve_linear(np.diag([2.0, 4.0]), np.array([[2.0], [8.0]]))
    assert np.allclose(x, [[1.0], [2.0]])


def test_solve_construct_then_recover():
    rng = np.random.default_rng(7)
    m = rng.standard_normal((8, 8)) + 8 * np.eye(8)
    x_true = rng.standard_normal((8, 3))
    x = tc.solve_linear(m, m @ x_true)
    assert np.abs(x - x_true).max() < 1e-9


def test_solve_residual_certificate():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m = rng.standard_normal((6, 6)) + 6 * np.eye(6)
        b = rng.standard_normal((6, 4))
        x = tc.solve_linear(m, b)
        assert np.linalg.norm(m @ x - b) / np.linalg.norm(b) <= 1e-10


def test_solve_singular_raises():
    m = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(SingularMatrix):
        tc.solve_linear(m, np.ones((2, 1)))


def test_solve_shape_errors():
    with pytest.raises(ShapeMismatch):
        tc.solve_linear(np.ones((2, 3)), np.ones((2, 1)))
    with pytest.raises(ShapeMismatch):
        tc.solve_linear(np.eye(3), np.ones((2, 1)))


def test_matmul_hand_values():
    b = np.array([[1.0], [1.0]])
    assert np.array_equal(tc.matmul(np.eye(2), b), b)
    out = tc.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), b)
    assert np.array_equal(out, [[3.0], [7.0]])


def test_matmul_transpose_identity():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 4))
    b = rng.standard_normal((4, 3))
    assert np.allclose(tc.matmul(a, b).T, tc.matmul(b.T, a.T))


def test_matmul_associativity():
    rng = np.random.default_rng(1)
    a, b, c = rng.standard_normal((4, 5)), rng.standard_normal((5, 6)), rng.standard_normal((6, 3))
    left = tc.matmul(tc.matmul(a, b), c)
    right = tc.matmul(a, tc.matmul(b, c))
    assert np.abs(left - right).max() / np.abs(left).max() < 1e-10


def test_matmul_shape_error():
    with pytest.raises(ShapeMismatch):
        tc.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_kmt_roundtrip_f32(tmp_path):
    rng = np.random.default_rng(5)
    arr = rng.standard_normal((3, 4, 5)).astype(np.float32)
    path = tmp_path / "t.kmt"
    tc.write_kmt(path, arr)
    back = tc.read_kmt(path)
    assert back.shape == (3, 4, 5)
    assert back.dtype == np.float64
    assert np.array_equal(back.astype(np.float32), arr)


def test_kmt_roundtrip_u8(tmp_path):
    arr = np.arange(12, dtype=np.uint8).reshape(3, 4)
    path = tmp_path / "l.kmt"
    tc.write_kmt(path, arr, dtype_code=1)
    back = tc.read_kmt(path)
    assert np.array_equal(back, arr)


def test_kmt_header_layout(tmp_path):
    path = tc.write_kmt(tmp_path / "h.kmt", np.zeros((2, 3), dtype=np.float32))
    raw = path.read_bytes()
    assert raw[:8] == b"KMTENSR1"
    assert raw[8] == 0  # f32
    assert raw[9] == 2  # ndim
    assert int.from_bytes(raw[10:18], "little") == 2
    assert int.from_bytes(raw[18:26], "little") == 3
    assert len(raw) == 26 + 2 * 3 * 4


def test_kmt_bad_magic(tmp_path):
    p = tmp_path / "bad.kmt"
    p.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(ValueError):
        tc.read_kmt(p)
