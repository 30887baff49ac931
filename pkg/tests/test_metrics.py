import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctdf.dataset import split_manifest
from ctdf.errors import ConfigError, DataIOError, DegenerateInputError, FormatError, ShapeError
from ctdf.fileio import write_pair
from ctdf.metrics import (COVARIANCE, CSV_FIELDS, PAPER, MetricsReport, Roi, SsimParams, cnr,
                          evaluate_manifest, rmse, slice_metrics, ssim, write_curves_csv)
from ctdf.sim import PhantomSpec, SimConfig, gen_pair

BOTH = [SsimParams(mode=PAPER), SsimParams(mode=COVARIANCE)]
images = arrays(np.float64, (4, 5), elements=st.floats(0, 3000))


def test_rmse_hand_cases():
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5), abs=1e-12)
    a = np.random.default_rng(0).uniform(0, 2000, (6, 6))
    assert rmse(a, a) == 0.0
    assert rmse(a, a + 5) == pytest.approx(5.0, abs=1e-12)


def test_rmse_shape_errors():
    with pytest.raises(ShapeError):
        rmse(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        rmse(np.zeros(0), np.zeros(0))


@settings(max_examples=100, deadline=None)
@given(images, images, images)
def test_rmse_is_a_metric(a, b, c):
    assert rmse(a, b) == pytest.approx(rmse(b, a), rel=1e-9, abs=1e-12)
    assert rmse(a, c) <= (rmse(a, b) + rmse(b, c)) * (1 + 1e-9) + 1e-12


@settings(max_examples=100, deadline=None)
@given(images)
def test_ssim_self_is_one(x):
    for p in BOTH:
        assert ssim(x, x, p) == 1.0


@pytest.mark.parametrize("p", BOTH, ids=["global", "cov"])
def test_ssim_constant_images(p):
    c = np.full((3, 3), 7.0)
    assert ssim(c, c, p) == 1.0
    z = np.zeros((3, 3))
    assert ssim(z, z, p) == 1.0


@settings(max_examples=100, deadline=None)
@given(images, images)
def test_ssim_symmetric_and_bounded(a, b):
    for p in BOTH:
        assert ssim(a, b, p) == pytest.approx(ssim(b, a, p), rel=1e-12, abs=1e-15)
    v = ssim(a + 1, b + 1, BOTH[0])
    assert 0 < v <= 1 + 1e-12


def test_ssim_two_by_two_hand_value():
    a = np.array([[0.0, 0.0], [1.0, 1.0]])
    b = np.array([[0.0, 0.0], [2.0, 2.0]])
    # mu 0.5 / 1, sigma 0.5 / 1, covariance 0.5
    expected = (2 * 0.5 * 1 + 1e-4) * (2 * 0.5 + 9e-4) / ((0.25 + 1 + 1e-4) * (0.25 + 1 + 9e-4))
    for p in BOTH:
        assert ssim(a, b, p) == pytest.approx(expected, abs=1e-14)


def test_ssim_modes_differ_on_anticorrelated():
    a = np.array([[0.0, 1.0], [0.0, 1.0]])
    b = 1.0 - a
    assert ssim(a, b, BOTH[1]) < ssim(a, b, BOTH[0])


def test_ssim_param_validation():
    with pytest.raises(ConfigError):
        SsimParams(a1=0)
    with pytest.raises(ConfigError):
        SsimParams(mode="windowed")


def test_cnr_example():
    img = np.zeros((4, 8))
    img[:, :4] = 10.0
    img[:, 4:] = np.array([3.0, 7.0] * 8).reshape(4, 4)  # mean 5, sigma 2
    fg, bg = Roi(0, 0, 4, 4), Roi(0, 4, 4, 4, "background")
    assert cnr(img, fg, bg) == pytest.approx(5.0, abs=1e-12)


def test_cnr_equal_means_is_zero():
    img = np.array([[4.0, 6.0, 5.0, 5.0]] * 2)
    assert cnr(img, Roi(0, 0, 2, 2), Roi(0, 2, 2, 2)) == 0.0


def test_cnr_degenerate_denominator():
    img = np.array([[1.0, 3.0, 11.0, 13.0]] * 2)
    with pytest.raises(DegenerateInputError, match="CNR undefined for equal ROI deviations"):
        cnr(img, Roi(0, 0, 2, 2), Roi(0, 2, 2, 2))


def test_roi_bounds():
    with pytest.raises(ShapeError):
        Roi(3, 0, 2, 2).extract(np.zeros((4, 4)))
    with pytest.raises(ShapeError):
        Roi(0, 0, 1, 3).extract(np.zeros((4, 4)))


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("val")
    stems = [f"pair_{i:05d}" for i in range(4)]
    for i, s in enumerate(stems):
        write_pair(str(root / s), gen_pair(PhantomSpec(size=32), SimConfig(n_angles=32, n_det=48), 5, i))
    m = split_manifest(stems, 0.5, seed=1)
    m.write(str(root / "manifest.txt"))
    from ctdf.dataset import DatasetManifest
    return DatasetManifest.read(str(root / "manifest.txt"))


def test_perfect_denoiser(manifest):
    from ctdf.fileio import load_pair_images

    def oracle(ldct):
        for s in manifest.val:
            imgs = load_pair_images(manifest.path(s), ("ldct", "ndct"))
            if np.array_equal(imgs["ldct"], ldct):
                return imgs["ndct"]
        raise AssertionError
    rep = evaluate_manifest(manifest, oracle)
    assert len(rep.rows) == len(manifest.val)
    assert all(r.rmse_out == 0 for r in rep.rows)
    assert all(r.ssim_paper_out == 1 and r.ssim_cov_out == 1 for r in rep.rows)
    assert [r.id for r in rep.rows] == manifest.val


def test_single_slice_aggregate(manifest):
    rep = evaluate_manifest(manifest, lambda x: x, stems=manifest.val[:1])
    m, row = rep.mean(), rep.rows[0]
    assert all(getattr(m, f) == getattr(row, f) for f in CSV_FIELDS[1:])
    assert row.rmse_out == row.rmse_ldct


def test_parallel_matches_serial(manifest):
    f = lambda x: 0.5 * x
    assert evaluate_manifest(manifest, f).rows == evaluate_manifest(manifest, f, workers=3).rows


def test_missing_file_names_stem(manifest):
    with pytest.raises(DataIOError, match="ghost"):
        evaluate_manifest(manifest, lambda x: x, stems=["ghost"])


def test_empty_validation():
    from ctdf.dataset import DatasetManifest
    with pytest.raises(ConfigError):
        evaluate_manifest(DatasetManifest(["a"], []), lambda x: x)


def test_csv_roundtrip(manifest, tmp_path):
    rep = evaluate_manifest(manifest, lambda x: 0.9 * x + 100)
    path = str(tmp_path / "m.csv")
    rep.write_csv(path)
    text = open(path, newline="").read()
    assert text.splitlines()[0] == ",".join(CSV_FIELDS)
    assert "\r" not in text and text.splitlines()[-1].startswith("MEAN,")
    back, mean = MetricsReport.read_csv(path)
    assert back.rows == rep.rows
    assert mean == back.mean() == rep.mean()


def test_csv_bad_header():
    with pytest.raises(FormatError):
        MetricsReport.from_csv("id,x\n")


def test_curves_csv(manifest, tmp_path):
    rep = evaluate_manifest(manifest, lambda x: x)
    path = str(tmp_path / "c.csv")
    write_curves_csv(rep, path)
    lines = open(path).read().splitlines()
    assert len(lines) == len(rep.rows) + 1
    assert lines[1].startswith("0,")


def test_slice_metrics_fields():
    a = np.full((4, 4), 1000.0)
    m = slice_metrics("s", a + 10, a, a)
    assert m.rmse_ldct == 10 and m.rmse_out == 0 and m.ssim_paper_out == 1
