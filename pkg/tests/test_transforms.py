import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from keymorph import transforms as tf
from keymorph.errors import DegenerateConfiguration, DuplicatePoints, ShapeMismatch


def _random_points(rng, n, d, spread=1.0):
    return tf.KeypointSet(rng.uniform(-spread, spread, (n, d)))


# --- affine ------------------------------------------------------------------


def test_identity_affine_fixes_points():
    rng = np.random.default_rng(0)
    pts = _random_points(rng, 7, 2)
    out = tf.apply_affine(tf.identity_affine(2), pts)
    assert np.array_equal(out.points, pts.points)


def test_compose_then_invert_is_identity():
    rng = np.random.default_rng(1)
    a = tf.AffineParams(np.hstack([rng.standard_normal((3, 3)) + 2 * np.eye(3),
                                   rng.standard_normal((3, 1))]))
    comp = tf.compose_affine(tf.invert_affine(a), a)
    assert np.allclose(comp.A, tf.identity_affine(3).A, atol=1e-12)


def test_solve_affine_exact_recovery():
    """With >= D+1 generic points and an exact affine, residual vanishes."""
    rng = np.random.default_rng(2)
    for d in (2, 3):
        true = tf.AffineParams(np.hstack([rng.standard_normal((d, d)) + np.eye(d),
                                          0.3 * rng.standard_normal((d, 1))]))
        p = _random_points(rng, 12, d)
        q = tf.apply_affine(true, p)
        est = tf.solve_affine(p, q)
        assert np.abs(est.A - true.A).max() < 1e-10


def test_solve_affine_matches_lstsq_oracle():
    """Noisy correspondences: answer must agree with numpy's least squares."""
    rng = np.random.default_rng(3)
    p = _random_points(rng, 20, 2)
    q = tf.KeypointSet(p.points @ rng.standard_normal((2, 2)).T
                       + 0.05 * rng.standard_normal((20, 2)) + 0.1)
    est = tf.solve_affine(p, q)
    x = np.hstack([p.points, np.ones((20, 1))])
    oracle, *_ = np.linalg.lstsq(x, q.points, rcond=None)
    assert np.allclose(est.A, oracle.T, atol=1e-9)


def test_solve_affine_translation_only():
    p = tf.KeypointSet(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    q = tf.KeypointSet(p.points + [0.25, -0.5])
    est = tf.solve_affine(p, q)
    assert np.allclose(est.linear, np.eye(2), atol=1e-12)
    assert np.allclose(est.translation, [0.25, -0.5], atol=1e-12)


def test_solve_affine_too_few_points():
    p = tf.KeypointSet(np.array([[0.0, 0.0], [1.0, 1.0]]))
    with pytest.raises(DegenerateConfiguration):
        tf.solve_affine(p, p)


def test_solve_affine_collinear_points():
    t = np.linspace(-1, 1, 8)
    p = tf.KeypointSet(np.stack([t, 2 * t], axis=1))
    with pytest.raises(DegenerateConfiguration):
        tf.solve_affine(p, p)


def test_solve_affine_shape_mismatch():
    rng = np.random.default_rng(4)
    with pytest.raises(ShapeMismatch):
        tf.solve_affine(_random_points(rng, 5, 2), _random_points(rng, 6, 2))


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_solve_affine_equivariance(seed):
    """Pre-composing the source with an affine G maps the solution to A о G^-1."""
    rng = np.random.default_rng(seed)
    p = _random_points(rng, 10, 2)
    q = _random_points(rng, 10, 2)
    g = tf.AffineParams(np.hstack([rng.uniform(0.5, 1.5) * np.eye(2)
                                   + 0.2 * rng.standard_normal((2, 2)),
                                   0.3 * rng.standard_normal((2, 1))]))
    base = tf.solve_affine(p, q)
    moved = tf.solve_affine(tf.apply_affine(g, p), q)
    expect = tf.compose_affine(base, tf.invert_affine(g))
    assert np.allclose(moved.A, expect.A, atol=1e-6)


# --- TPS kernel and solve ----------------------------------------------------


def test_kernel_hand_values():
    # r = 2: U = 4 ln 2; r = e: U = e^2; r in {0, 1}: U = 0
    assert tf.tps_u_from_sqdist(np.array([4.0]))[0] == pytest.approx(4.0 * np.log(2.0), abs=1e-12)
    assert tf.tps_u_from_sqdist(np.array([np.e**2]))[0] == pytest.approx(np.e**2, rel=1e-12)
    assert tf.tps_u_from_sqdist(np.array([0.0]))[0] == 0.0
    assert tf.tps_u_from_sqdist(np.array([1.0]))[0] == 0.0


def test_tps_interpolates_at_lambda_zero():
    rng = np.random.default_rng(5)
    for d in (2, 3):
        p = _random_points(rng, 9, d)
        q = _random_points(rng, 9, d)
        theta = tf.solve_tps(p, q, 0.0)
        out = tf.tps_apply(theta, p)
        assert np.abs(out.points - q.points).max() < 1e-8


def test_tps_exact_affine_input_gives_zero_w():
    """If targets are an exact affine image of sources, W must vanish."""
    rng = np.random.default_rng(6)
    p = _random_points(rng, 8, 2)
    a = tf.AffineParams(np.array([[1.1, 0.2, 0.05], [-0.3, 0.9, -0.1]]))
    q = tf.apply_affine(a, p)
    theta = tf.solve_tps(p, q, 0.0)
    assert np.abs(theta.W).max() < 1e-8
    assert np.allclose(theta.A.T, a.A, atol=1e-8)


def test_tps_side_conditions():
    """L^T W = 0: nonlinear coefficients are orthogonal to affine functions."""
    rng = np.random.default_rng(7)
    p = _random_points(rng, 11, 2)
    q = _random_points(rng, 11, 2)
    for lam in (0.0, 0.01, 1.0):
        theta = tf.solve_tps(p, q, lam)
        ell = np.hstack([p.points, np.ones((11, 1))])
        assert np.abs(ell.T @ theta.W).max() < 1e-9


def test_tps_residual_grows_with_lambda():
    """Control point residual is 0 at lambda = 0 and increases with lambda."""
    rng = np.random.default_rng(8)
    p = _random_points(rng, 10, 2)
    q = _random_points(rng, 10, 2)
    prev = -1.0
    for lam in (0.0, 0.01, 0.1, 1.0, 10.0):
        theta = tf.solve_tps(p, q, lam)
        res = np.abs(tf.tps_apply(theta, p).points - q.points).max()
        assert res >= prev - 1e-12
        prev = res


def test_tps_continuity_in_lambda():
    rng = np.random.default_rng(9)
    p = _random_points(rng, 10, 2)
    q = _random_points(rng, 10, 2)
    t1 = tf.solve_tps(p, q, 0.1)
    t2 = tf.solve_tps(p, q, 0.1 + 1e-9)
    assert np.abs(t1.W - t2.W).max() < 1e-6
    assert np.abs(t1.A - t2.A).max() < 1e-6


def test_tps_large_lambda_approaches_affine():
    rng = np.random.default_rng(10)
    p = _random_points(rng, 12, 2)
    q = _random_points(rng, 12, 2)
    theta = tf.solve_tps(p, q, 1e6)
    affine = tf.solve_affine(p, q)
    qn = np.linalg.norm(q.points)
    assert np.linalg.norm(theta.W) < 1e-4 * qn
    grid = tf.KeypointSet(tf.normalized_grid((16, 16)))
    via_tps = tf.tps_apply(theta, grid).points
    via_aff = tf.apply_affine(affine, grid).points
    assert np.abs(via_tps - via_aff).max() < 1e-2


def test_bending_energy_zero_for_affine_motion():
    rng = np.random.default_rng(11)
    p = _random_points(rng, 8, 2)
    a = tf.AffineParams(np.array([[0.9, 0.1, 0.2], [0.0, 1.2, -0.3]]))
    theta = tf.solve_tps(p, tf.apply_affine(a, p), 0.0)
    assert tf.bending_energy(theta) < 1e-10


def test_bending_energy_monotone_in_lambda():
    rng = np.random.default_rng(12)
    p = _random_points(rng, 14, 2)
    q = tf.KeypointSet(p.points + 0.2 * rng.standard_normal((14, 2)))
    energies = [tf.bending_energy(tf.solve_tps(p, q, lam))
                for lam in (0.0, 0.01, 0.1, 1.0, 10.0)]
    for lo, hi in zip(energies[1:], energies[:-1]):
        assert lo <= hi + 1e-12
    assert energies[0] > energies[-1]


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_kernel_positive_on_admissible_coefficients(seed):
    """w^T K w >= 0 whenever L^T w = 0, so the energy is always nonnegative."""
    rng = np.random.default_rng(seed)
    p = rng.uniform(-1, 1, (10, 2))
    ell = np.hstack([p, np.ones((10, 1))])
    k = tf.tps_u_from_sqdist(tf._pairwise_sqdist(p, p))
    _, _, vt = np.linalg.svd(ell.T)
    null = vt[3:].T
    w = null @ rng.standard_normal((null.shape[1], 2))
    assert float(np.trace(w.T @ k @ w)) >= -1e-10


def test_tps_duplicate_points_raise():
    pts = np.array([[0.0, 0.0], [0.5, 0.5], [0.5, 0.5], [-0.5, 0.2]])
    p = tf.KeypointSet(pts)
    q = tf.KeypointSet(pts + 0.1)
    with pytest.raises(DuplicatePoints):
        tf.solve_tps(p, q, 0.0)
    # regularized system tolerates duplicates
    theta = tf.solve_tps(p, q, 0.1)
    assert np.all(np.isfinite(theta.W))


def test_tps_negative_lambda_rejected():
    rng = np.random.default_rng(14)
    p = _random_points(rng, 6, 2)
    with pytest.raises(ValueError):
        tf.solve_tps(p, p, -0.5)


# --- grids and dense fields --------------------------------------------------


def test_normalized_grid_cell_centers():
    g = tf.normalized_grid((2, 4))
    assert g.shape == (8, 2)
    assert np.allclose(sorted(set(g[:, 0])), [-0.5, 0.5])
    assert np.allclose(sorted(set(g[:, 1])), [-0.75, -0.25, 0.25, 0.75])


def test_normalized_grid_symmetry():
    g = tf.normalized_grid((5, 5, 5))
    assert np.allclose(g.mean(axis=0), 0.0, atol=1e-15)


def test_dense_displacement_identity_is_zero():
    disp = tf.dense_displacement(tf.identity_affine(2), (6, 8))
    assert disp.shape == (6, 8, 2)
    assert np.abs(disp).max() == 0.0


def test_dense_displacement_translation():
    a = tf.AffineParams(np.array([[1.0, 0.0, 0.125], [0.0, 1.0, -0.25]]))
    disp = tf.dense_displacement(a, (4, 4))
    assert np.allclose(disp[..., 0], 0.125)
    assert np.allclose(disp[..., 1], -0.25)


# --- serialization -----------------------------------------------------------


def test_affine_roundtrip(tmp_path):
    a = tf.AffineParams(np.array([[1.5, -0.25, 0.1], [0.3, 0.75, -0.2]]))
    path = tmp_path / "t.json"
    tf.save_transform(path, a)
    back = tf.load_transform(path)
    assert isinstance(back, tf.AffineParams)
    assert np.array_equal(back.A, a.A)


def test_tps_roundtrip(tmp_path):
    rng = np.random.default_rng(15)
    p = _random_points(rng, 7, 2)
    q = _random_points(rng, 7, 2)
    theta = tf.solve_tps(p, q, 0.25)
    path = tmp_path / "t.json"
    tf.save_transform(path, theta)
    back = tf.load_transform(path)
    assert isinstance(back, tf.TpsParams)
    assert back.lam == 0.25
    grid = tf.KeypointSet(tf.normalized_grid((8, 8)))
    assert np.array_equal(tf.tps_apply(back, grid).points,
                          tf.tps_apply(theta, grid).points)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        tf.transform_from_dict({"kind": "quadratic"})


# --- differentiable builders agree with the plain solvers ---------------------


def test_v_solvers_match_plain():
    from keymorph import autodiff as ad

    rng = np.random.default_rng(16)
    p = _random_points(rng, 9, 2)
    q = _random_points(rng, 9, 2)

    block = tf.solve_affine_v(ad.Var(p.points, op="const"), ad.Var(q.points, op="const"))
    plain = tf.solve_affine(p, q)
    assert np.allclose(block.value.T, plain.A, atol=1e-10)

    theta_v = tf.solve_tps_v(ad.Var(p.points, op="const"), ad.Var(q.points, op="const"), 0.05)
    plain_t = tf.solve_tps(p, q, 0.05)
    assert np.allclose(theta_v.value[:9], plain_t.W, atol=1e-10)
    assert np.allclose(theta_v.value[9:], plain_t.A, atol=1e-10)
