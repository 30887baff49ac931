import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctdf.dataset import (SCALE, AugmentParams, DatasetManifest, Transform, apply_transform, augment,
                          denormalize, draw_transform, normalize, rotate, split_manifest)
from ctdf.errors import ConfigError, FormatError
from ctdf.sim import PhantomSpec, SimConfig, TrainingPair, gen_pair


@pytest.fixture(scope="module")
def pair():
    return gen_pair(PhantomSpec(size=32), SimConfig(n_angles=48, n_det=48), seed=3)


def test_normalize_examples():
    t = normalize(np.array([[0.0, 2000.0], [1000.0, 500.0]]))
    assert t.shape == (1, 1, 2, 2)
    assert t.data.ravel().tolist() == [0.0, 1.0, 0.5, 0.25]
    assert SCALE == 2000


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_denormalize_inverts(seed):
    img = np.random.default_rng(seed).uniform(-500, 3000, (4, 5))
    back = denormalize(normalize(img))
    assert np.all(np.abs(back - img) <= np.spacing(np.abs(img)))


def test_normalize_float32_dtype():
    assert normalize(np.ones((3, 3)), np.float32).dtype == np.float32


def test_identity_augmentation_returns_pair(pair):
    p = AugmentParams(max_translate=0, rotate_range=0, target_size=32)
    assert augment(pair, p, 0) is pair


def test_rotation_zero_is_identity():
    img = np.random.default_rng(0).random((8, 8))
    assert rotate(img, 0.0) is img


def test_pure_translation_oracle(pair):
    out = apply_transform(pair.ldct, Transform(3, 0, 0.0), 32)
    assert np.array_equal(out[3:], pair.ldct[:-3])
    assert not out[:3].any()
    out = apply_transform(pair.ldct, Transform(0, -5, 0.0), 32)
    assert np.array_equal(out[:, :-5], pair.ldct[:, 5:])
    assert not out[:, -5:].any()


def test_padding_to_larger_target(pair):
    out = apply_transform(pair.ndct, Transform(0, 0, 0.0), 40)
    assert out.shape == (40, 40)
    assert np.array_equal(out[4:36, 4:36], pair.ndct)


@pytest.mark.parametrize("seed", range(8))
def test_augmented_pair_algebra(pair, seed):
    out, tf = augment(pair, AugmentParams(8, 10.0, 32), seed, return_transform=True)
    assert np.array_equal(out.ldct - out.ndct, out.added_noise)
    assert np.array_equal(out.ndct - out.clean, out.target_noise)
    # the one transform drawn for the pair is applied to each image
    from ctdf.sim import quantize
    assert np.array_equal(out.ndct, quantize(apply_transform(pair.ndct, tf, 32)))
    assert np.array_equal(out.clean, quantize(apply_transform(pair.clean, tf, 32)))


def test_augment_deterministic(pair):
    p = AugmentParams(8, 10.0, 32)
    a, b = augment(pair, p, 42), augment(pair, p, 42)
    assert np.array_equal(a.ldct, b.ldct)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_draw_transform_in_range(seed):
    tf = draw_transform(AugmentParams(5, 10.0, 32), seed)
    assert abs(tf.dy) <= 5 and abs(tf.dx) <= 5 and abs(tf.degrees) <= 10


def test_rotation_preserves_centre_of_symmetric_disk():
    yy, xx = np.mgrid[0:33, 0:33]
    img = (np.hypot(yy - 16, xx - 16) <= 10).astype(float)
    rot = rotate(img, 7.0)
    assert rot[16, 16] == 1.0
    assert abs(rot.sum() - img.sum()) / img.sum() < 0.02


@pytest.mark.parametrize("bad", [AugmentParams(32, 10, 32), AugmentParams(-1, 10, 32), AugmentParams(4, -1, 32)])
def test_augment_param_validation(bad):
    with pytest.raises(ConfigError):
        bad.validate()


def test_for_size_quarter_translation():
    assert AugmentParams.for_size(64) == AugmentParams(16, 10.0, 64)
    assert AugmentParams.for_size(512).max_translate == 128


def test_split_examples():
    stems = [f"s{i}" for i in range(10)]
    m = split_manifest(stems, 0.8, seed=1)
    assert (len(m.train), len(m.val)) == (8, 2)
    assert not set(m.train) & set(m.val)
    assert sorted(m.entries) == sorted(stems)
    assert split_manifest(stems, 0.8, seed=1) == m
    assert split_manifest(stems, 0.8, seed=2) != m
    m = split_manifest(["a", "b"], 0.5, seed=0)
    assert (len(m.train), len(m.val)) == (1, 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.floats(0.05, 0.95), st.integers(0, 2**63))
def test_split_ceiling_rule(n, ratio, seed):
    m = split_manifest([f"p{i}" for i in range(n)], ratio, seed)
    assert len(m.train) == int(np.ceil(ratio * n - 1e-9))
    assert len(m.train) + len(m.val) == n


def test_split_errors():
    with pytest.raises(ConfigError):
        split_manifest([], 0.8)
    with pytest.raises(ConfigError):
        split_manifest(["a"], 1.0)
    with pytest.raises(ConfigError):
        DatasetManifest(["a"], ["a"])


def test_manifest_text_roundtrip(tmp_path):
    m = split_manifest([f"pair_{i:05d}" for i in range(7)], 0.8, seed=12345678901234)
    text = m.dumps()
    assert text.splitlines()[:2] == ["# seed=12345678901234", "[train]"]
    assert "[val]" in text.splitlines()
    assert DatasetManifest.loads(text) == m
    path = tmp_path / "manifest.txt"
    m.write(str(path))
    back = DatasetManifest.read(str(path))
    assert back == m and back.root == str(tmp_path)
    assert back.path("x") == str(tmp_path / "x")


def test_manifest_rejects_entry_before_section():
    with pytest.raises(FormatError):
        DatasetManifest.loads("pair_0\n[train]\n")
