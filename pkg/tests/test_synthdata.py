import numpy as np
import pytest

from keymorph import synthdata as sd
from keymorph import metrics as mx
from keymorph.transforms import apply_affine, KeypointSet


def test_generation_deterministic():
    a = sd.generate_subject(7, (32, 32))
    b = sd.generate_subject(7, (32, 32))
    assert np.array_equal(a.labels.data, b.labels.data)
    for ia, ib in zip(a.images, b.images):
        assert np.array_equal(ia.data, ib.data)


def test_all_labels_present():
    s = sd.generate_subject(0, (64, 64))
    assert set(np.unique(s.labels.data)) == set(range(sd.NUM_LABELS))


def test_subject_diversity():
    """Different seeds must differ in more than 1% of voxels."""
    a = sd.generate_subject(1, (64, 64))
    b = sd.generate_subject(2, (64, 64))
    frac = np.mean(a.labels.data != b.labels.data)
    assert frac > 0.01


def test_modalities_share_labels_bitwise():
    s = sd.generate_subject(3, (48, 48))
    assert len(s.images) == sd.NUM_MODALITIES
    # one geometry, different contrasts: label regions must have distinct
    # mean intensity orderings between modality 0 and 1 (inverted contrast)
    ring = s.labels.data == 1
    blob = s.labels.data == 3
    m0, m1 = s.images[0].data, s.images[1].data
    assert m0[ring].mean() > m0[blob].mean()
    assert m1[ring].mean() < m1[blob].mean()


def test_modality_intensity_correlation_low():
    s = sd.generate_subject(4, (64, 64))
    fg = s.labels.data > 0
    c = np.corrcoef(s.images[0].data[fg], s.images[1].data[fg])[0, 1]
    assert abs(c) < 0.5 or c < 0  # contrast inversion: not strongly aligned


def test_render_rejects_bad_modality():
    s = sd.generate_subject(0, (32, 32))
    with pytest.raises(ValueError):
        sd.render_modality(s, sd.NUM_MODALITIES)


def test_image_range():
    s = sd.generate_subject(5, (32, 32))
    for img in s.images:
        assert img.data.min() >= 0.0
        assert img.data.max() <= 1.0


# --- misalignment ------------------------------------------------------------


def test_misalign_zero_angle_identity_rotation():
    s = sd.generate_subject(0, (32, 32))
    img, labels, affine = sd.misalign(s, 0.0, rng=np.random.default_rng(0))
    assert np.allclose(affine.linear, np.eye(2), atol=1e-12)
    assert np.allclose(img.data, s.images[0].data, atol=1e-9)
    assert np.array_equal(labels.data, s.labels.data)


def test_misalign_affine_reproduces_output():
    from keymorph.warp import warp_image

    s = sd.generate_subject(1, (32, 32))
    img, _, affine = sd.misalign(s, 90.0, rng=np.random.default_rng(3))
    redo = warp_image(s.images[0], affine)
    assert np.array_equal(redo.data, img.data)


def test_misalign_large_angle_drops_overlap():
    s = sd.generate_subject(2, (64, 64))
    _, labels, _ = sd.misalign(s, 150.0, rng=np.random.default_rng(5))
    # rotated labels overlap the original poorly
    _, d = mx.dice(labels, s.labels)
    assert d < 0.8


def test_misalign_rejects_out_of_range():
    s = sd.generate_subject(0, (32, 32))
    with pytest.raises(ValueError):
        sd.misalign(s, 200.0)
    with pytest.raises(ValueError):
        sd.misalign(s, -5.0)


def test_misalign_3d_runs():
    s = sd.generate_subject(0, (16, 16, 16))
    img, labels, affine = sd.misalign(s, 45.0, rng=np.random.default_rng(1))
    assert img.data.shape == (16, 16, 16)
    assert affine.A.shape == (3, 4)


# --- dataset io --------------------------------------------------------------


def test_dataset_roundtrip(tmp_path):
    sd.write_dataset(tmp_path, 3, shape=(32, 32), base_seed=10)
    subjects = sd.load_dataset(tmp_path)
    assert len(subjects) == 3
    ref = sd.generate_subject(10, (32, 32))
    assert np.array_equal(subjects[0]["labels"].data, ref.labels.data)
    assert np.allclose(
        subjects[0]["modalities"][0], ref.images[0].data.astype(np.float32), atol=1e-7
    )
    oh = subjects[0]["onehot"]
    assert oh.shape == (sd.NUM_LABELS, 32, 32)
    assert np.array_equal(oh.sum(axis=0), np.ones((32, 32)))


def test_split_deterministic_and_disjoint():
    tr, va, te = sd.split_dataset(20, split_seed=0)
    tr2, va2, te2 = sd.split_dataset(20, split_seed=0)
    assert (tr, va, te) == (tr2, va2, te2)
    assert len(tr) + len(va) + len(te) == 20
    assert not (set(tr) & set(va) | set(tr) & set(te) | set(va) & set(te))
    assert sd.split_dataset(20, split_seed=1)[0] != tr
