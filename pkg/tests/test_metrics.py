from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ugda import oracles
from ugda.augment import AugmentConfig, augment_batch
from ugda.consistency import extract_features
from ugda.dataio import load_image
from ugda.metrics import (
    ERROR_RAMP,
    MetricReport,
    aggregate_reports,
    compute_d1,
    compute_epe,
    error_map,
    feature_histogram,
    format_report,
    image_histogram,
    write_error_map,
    write_histogram_csv,
    write_reports_csv,
)
from ugda.stereo import DisparityMap
from ugda.tensor import EmptyOverlapError, ImageF, InvalidInputError


def _dm(values, valid=None) -> DisparityMap:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return DisparityMap(values, np.ones(values.shape, bool) if valid is None else np.asarray(valid))


def test_perfect_prediction():
    d = _dm(np.arange(12.0).reshape(3, 4))
    assert compute_epe(d, d) == 0.0
    assert compute_d1(d, d, 3.0).d1 == 0.0


def test_constant_offset():
    gt = _dm(np.arange(12.0).reshape(3, 4))
    assert compute_epe(_dm(gt.disparity + 1.0), gt) == 1.0


def test_mean_over_joint_mask():
    pred = _dm([[0.0, 1.0, 2.0, 5.0, 50.0, 9.0]], [[1, 1, 1, 1, 0, 1]])
    gt = _dm([[0.0] * 6], [[1, 1, 1, 1, 1, 0]])
    assert compute_epe(pred, gt) == 2.0


def test_half_bad():
    pred = _dm(np.r_[np.full(50, 5.0), np.zeros(50)].reshape(10, 10))
    r = compute_d1(pred, _dm(np.zeros((10, 10))), 3.0)
    assert (r.d1, r.n_valid, r.n_bad) == (0.5, 100, 50)


def test_threshold_is_strict():
    r = compute_d1(_dm([[3.0, 3.0000001]]), _dm([[0.0, 0.0]]), 3.0)
    assert r.n_bad == 1


def test_empty_overlap_raises():
    with pytest.raises(EmptyOverlapError):
        compute_epe(_dm([[1.0]], [[False]]), _dm([[1.0]]))
    with pytest.raises(InvalidInputError):
        compute_d1(_dm(np.zeros((2, 2))), _dm(np.zeros((2, 3))))


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 64), st.integers(1, 64))
def test_matches_per_pixel_reference(seed, h, w):
    rng = np.random.default_rng(seed)
    pred = _dm(rng.uniform(0, 30, (h, w)), rng.random((h, w)) < 0.8)
    gt = _dm(rng.uniform(0, 30, (h, w)), rng.random((h, w)) < 0.8)
    if not (pred.valid & gt.valid).any():
        return
    prev = 1.0
    for t in (1.0, 2.0, 3.0):
        r = compute_d1(pred, gt, t)
        assert (r.epe, r.d1, r.n_valid, r.n_bad) == oracles.epe_d1(pred.disparity, pred.valid, gt.disparity,
                                                                     gt.valid, t)
        assert r.d1 <= prev
        prev = r.d1


def test_aggregation_is_pixel_weighted():
    a = MetricReport(epe=1.0, d1=0.5, threshold=3.0, n_valid=2, n_bad=1)
    b = MetricReport(epe=4.0, d1=0.0, threshold=3.0, n_valid=6, n_bad=0)
    agg = aggregate_reports([a, b])
    assert agg.epe == (2 * 1.0 + 6 * 4.0) / 8
    assert (agg.n_valid, agg.n_bad, agg.d1) == (8, 1, 1 / 8)
    with pytest.raises(InvalidInputError):
        aggregate_reports([a, MetricReport(1.0, 0.0, 1.0, 1, 0)])


def test_report_text_and_csv():
    r = MetricReport(epe=0.25, d1=0.1, threshold=2.0, n_valid=10, n_bad=1)
    lines = format_report(r, prefix="p.").splitlines()
    assert lines == ["p.epe=0.25", "p.d1=0.1", "p.threshold=2.0", "p.n_valid=10", "p.n_bad=1"]
    out = io.StringIO()
    write_reports_csv(out, [("x", r)])
    assert out.getvalue() == "name,epe,d1,threshold,n_valid,n_bad\nx,0.25,0.1,2.0,10,1\n"


# -- histograms -------------------------------------------------------------------------------

def test_constant_image_single_bin():
    h = image_histogram(ImageF(np.full((4, 5, 3), 0.5)))
    assert h.counts.shape == (3, 256)
    assert (h.counts[:, 128] == 20).all() and h.counts.sum() == 60


def test_ramp_fills_every_bin():
    ramp = ImageF((np.arange(256.0) / 255.0).reshape(16, 16, 1))
    h = image_histogram(ramp)
    assert (h.counts == 1).all()


def test_out_of_range_values_land_in_end_bins():
    img = ImageF(np.array([[-0.3, 1.4]]), augmented_unclipped=True)
    h = image_histogram(img)
    assert h.counts[0, 0] == 1 and h.counts[0, 255] == 1


def test_histogram_ignores_pixel_order(rng):
    data = rng.uniform(0, 1, (6, 7, 3))
    shuffled = rng.permutation(data.reshape(-1, 3)).reshape(6, 7, 3)
    assert np.array_equal(image_histogram(ImageF(data)).counts, image_histogram(ImageF(shuffled)).counts)


def test_feature_histogram_range(rng):
    f = extract_features(ImageF(rng.uniform(0, 1, (8, 8, 3))))
    h = feature_histogram(f)
    avg = f.data.mean(axis=2)
    assert (h.lo, h.hi) == (avg.min(), avg.max())
    assert h.counts.sum() == 64


def test_histogram_mean_follows_logged_shift(rng):
    dark = ImageF(rng.uniform(0.2, 0.4, (32, 32, 3)))
    bright = ImageF(rng.uniform(0.55, 0.75, (32, 32, 3)))
    out, log = augment_batch([(dark, dark), (bright, bright)], AugmentConfig(seed=6))
    for (img, _), rec in zip(out, log[0::2]):
        orig = dark if rec.pair == 0 else bright
        h0, h1 = image_histogram(orig), image_histogram(img)
        shift = rec.draw.mu_prime - rec.stats.mean
        assert np.all(np.abs((h1.mean() - h0.mean()) - shift) <= h0.bin_width)


def test_histogram_csv_layout():
    out = io.StringIO()
    write_histogram_csv(out, image_histogram(ImageF(np.full((1, 2, 3), 0.0))))
    lines = out.getvalue().splitlines()
    assert lines[0] == "bin_center,count_c0,count_c1,count_c2"
    assert lines[1] == f"{0.5 / 256!r},2,2,2" and len(lines) == 257


# -- error maps ---------------------------------------------------------------------------------

def test_perfect_map_is_black():
    d = _dm(np.ones((3, 3)))
    img, epe = error_map(d, d)
    assert epe == 0.0 and not img.data.any()


def test_single_bad_pixel():
    gt = _dm(np.zeros((4, 4)))
    pred = gt.disparity.copy()
    pred[2, 1] = 2.0
    img, _ = error_map(_dm(pred), gt)
    assert np.argwhere(img.data.any(axis=2)).tolist() == [[2, 1]]


def test_ramp_endpoints():
    gt = _dm(np.zeros((1, 3)), [[1, 1, 0]])
    img, _ = error_map(_dm([[0.0, 9.0, 9.0]]), gt, clip=3.0)
    assert img.data[0, 0].tolist() == list(ERROR_RAMP[0][1])
    assert img.data[0, 1].tolist() == list(ERROR_RAMP[-1][1])
    assert img.data[0, 2].tolist() == [0.0, 0.0, 0.0]


def test_error_map_files(tmp_path):
    gt = _dm(np.zeros((4, 6)))
    epe = write_error_map(tmp_path / "e.png", _dm(np.full((4, 6), 0.5)), gt)
    assert epe == 0.5
    assert (tmp_path / "e.png.txt").read_text() == "epe=0.5\n"
    assert load_image(tmp_path / "e.png").shape == (4, 6, 3)
