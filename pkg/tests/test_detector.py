import numpy as np
import pytest

from keymorph import detector as det
from keymorph.errors import NonFiniteActivation, ShapeMismatch


def _cfg(**kw):
    base = dict(d=2, num_keypoints=4, num_blocks=2, channels=(4, 8), input_extent=16)
    base.update(kw)
    return det.DetectorConfig(**base)


# --- center-of-mass head -----------------------------------------------------


def test_com_uniform_map_gives_centroid():
    acts = np.zeros((3, 8, 8))
    kp = det.com_layer(acts)
    assert np.allclose(kp.points, 0.0, atol=1e-12)


def test_com_spike_recovers_voxel_center():
    acts = np.full((1, 16, 16), -1000.0)
    acts[0, 3, 12] = 1000.0
    kp = det.com_layer(acts, temperature=1.0)
    expected = np.array([-1 + 2 * (3 + 0.5) / 16, -1 + 2 * (12 + 0.5) / 16])
    assert np.abs(kp.points[0] - expected).max() < 1e-4


def test_com_two_equal_spikes_give_midpoint():
    acts = np.full((1, 16, 16), -1000.0)
    acts[0, 2, 2] = 1000.0
    acts[0, 10, 6] = 1000.0
    kp = det.com_layer(acts)
    a = np.array([-1 + 2 * (2 + 0.5) / 16, -1 + 2 * (2 + 0.5) / 16])
    b = np.array([-1 + 2 * (10 + 0.5) / 16, -1 + 2 * (6 + 0.5) / 16])
    assert np.abs(kp.points[0] - (a + b) / 2).max() < 1e-4


def test_com_circular_shift_covariance():
    """Rolling the activations k voxels moves the output by exactly 2k/n.

    The map is scaled so that softmax mass outside the peak underflows to
    zero; no mass wraps around, making the shift identity exact.
    """
    rng = np.random.default_rng(0)
    acts = 100.0 * rng.standard_normal((2, 12, 12))
    # concentrate away from the wrap edge
    acts[:, :3, :] -= 1e4
    acts[:, -3:, :] -= 1e4
    acts[:, :, :3] -= 1e4
    acts[:, :, -3:] -= 1e4
    base = det.com_layer(acts, temperature=1.0)
    k = 2
    rolled = np.roll(acts, (k, -k), axis=(1, 2))
    shifted = det.com_layer(rolled, temperature=1.0)
    delta = np.array([2 * k / 12, -2 * k / 12])
    assert np.abs(shifted.points - (base.points + delta)).max() < 1e-12


def test_com_3d_spike():
    acts = np.full((1, 8, 8, 8), -1000.0)
    acts[0, 1, 4, 6] = 1000.0
    kp = det.com_layer(acts)
    expected = -1 + 2 * (np.array([1, 4, 6]) + 0.5) / 8
    assert np.abs(kp.points[0] - expected).max() < 1e-4


def test_com_rejects_nonfinite():
    acts = np.zeros((1, 4, 4))
    acts[0, 0, 0] = np.nan
    import keymorph.autodiff as ad

    with pytest.raises(NonFiniteActivation):
        det.com_layer_v(ad.Var(acts, op="const"))


# --- initialization ----------------------------------------------------------


def test_init_deterministic_per_seed():
    a = det.init_weights(_cfg(), seed=3)
    b = det.init_weights(_cfg(), seed=3)
    assert a.params.keys() == b.params.keys()
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    c = det.init_weights(_cfg(), seed=4)
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)


def test_init_fan_in_bounds():
    w = det.init_weights(_cfg(), seed=0)
    arr = w.params["block0.conv.w"]
    limit = np.sqrt(1.0 / (1 * 9))
    assert np.abs(arr).max() <= limit


def test_config_validation():
    with pytest.raises(ValueError):
        det.DetectorConfig(d=2, num_blocks=3, channels=(4, 8))
    with pytest.raises(ValueError):
        det.DetectorConfig(d=2, num_blocks=3, channels=(4, 8, 16), input_extent=20)


# --- forward -----------------------------------------------------------------


def test_forward_output_shape_and_range():
    w = det.init_weights(_cfg(), seed=0)
    img = np.random.default_rng(1).uniform(0, 1, (16, 16))
    kp = det.detect(w, img)
    assert kp.points.shape == (4, 2)
    assert np.all(np.abs(kp.points) <= 1.0)  # weighted average of grid coords


def test_forward_rejects_bad_extent():
    w = det.init_weights(_cfg(), seed=0)
    with pytest.raises(ShapeMismatch):
        det.detect(w, np.zeros((18, 18)))
    with pytest.raises(ShapeMismatch):
        det.detect(w, np.zeros((16, 16, 16)))


def test_fc_head_output_shape():
    w = det.init_weights(_cfg(head="fc"), seed=0)
    kp = det.detect(w, np.random.default_rng(2).uniform(0, 1, (16, 16)))
    assert kp.points.shape == (4, 2)


def test_forward_features_per_block():
    w = det.init_weights(_cfg(), seed=0)
    _, feats, _ = det.forward(w, np.zeros((16, 16)), want_features=True)
    assert len(feats) == 2
    assert feats[0].value.shape == (4, 8, 8)
    assert feats[1].value.shape == (8, 4, 4)


def test_detect_increments_counter():
    w = det.init_weights(_cfg(), seed=0)
    before = det.DETECT_CALLS
    det.detect(w, np.zeros((16, 16)))
    det.detect(w, np.zeros((16, 16)))
    assert det.DETECT_CALLS == before + 2


def test_detect_deterministic():
    w = det.init_weights(_cfg(), seed=0)
    img = np.random.default_rng(3).uniform(0, 1, (16, 16))
    a = det.detect(w, img)
    b = det.detect(w, img)
    assert np.array_equal(a.points, b.points)


# --- persistence -------------------------------------------------------------


def test_weights_roundtrip(tmp_path):
    w = det.init_weights(_cfg(), seed=5)
    det.save_weights(tmp_path / "m", w)
    back = det.load_weights(tmp_path / "m")
    assert back.config == w.config
    assert back.seed == 5
    img = np.random.default_rng(4).uniform(0, 1, (16, 16))
    # f32 storage: detections agree to f32 precision
    assert np.abs(det.detect(back, img).points - det.detect(w, img).points).max() < 1e-5


def test_weights_copy_is_deep():
    w = det.init_weights(_cfg(), seed=0)
    c = w.copy()
    c.params["block0.conv.w"][:] = 0.0
    assert np.abs(w.params["block0.conv.w"]).max() > 0.0
