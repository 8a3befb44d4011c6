from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ugda import oracles
from ugda.dataio import make_synthetic_pair, make_two_layer_pair
from ugda.stereo import (
    CostVolume,
    DisparityMap,
    SgmParams,
    build_cost_volume,
    census_transform,
    hamming,
    lr_consistency_check,
    match,
    sgm_aggregate,
    wta_subpixel,
)
from ugda.tensor import ImageF, InvalidInputError


def _vol(cost) -> CostVolume:
    cost = np.asarray(cost, dtype=float)
    return CostVolume(cost, np.ones(cost.shape[:2], bool), sentinel=float(cost.max()))


# -- census -------------------------------------------------------------------------

def test_constant_image_gives_zero_codes():
    cm = census_transform(np.full((9, 9), 0.4), 5)
    assert not cm.codes.any()


def test_brighter_center_sets_every_bit():
    g = np.full((3, 3), 0.4)
    g[1, 1] = 0.5
    cm = census_transform(g, 3)
    assert oracles.packed_to_int(cm.codes[1, 1]) == 0xFF
    assert cm.valid[1, 1] and cm.valid.sum() == 1


def test_ties_give_zero_bits():
    g = np.full((3, 3), 0.5)
    g[0, 0] = 0.4
    assert oracles.packed_to_int(census_transform(g, 3).codes[1, 1]) == 1


@pytest.mark.parametrize("window", [3, 5, 7, 9, 11])
def test_census_matches_loops(rng, window):
    g = rng.integers(0, 6, (window + 6, window + 5)).astype(float)
    cm = census_transform(g, window)
    ref = oracles.census_codes(g, window)
    for y, row in enumerate(ref):
        for x, code in enumerate(row):
            assert cm.valid[y, x] == (code is not None)
            if code is not None:
                assert oracles.packed_to_int(cm.codes[y, x]) == code


def test_census_border_invalid(rng):
    cm = census_transform(rng.uniform(0, 1, (10, 12)), 5)
    assert not cm.valid[:2].any() and not cm.valid[-2:].any()
    assert not cm.valid[:, :2].any() and not cm.valid[:, -2:].any()
    assert cm.valid[2:-2, 2:-2].all()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 50.0), st.floats(-5.0, 5.0))
def test_census_positive_affine_invariance(seed, gain, bias):
    x = np.random.default_rng(seed).uniform(0, 1, (11, 13))
    y = gain * x + bias
    # float rounding may merge two distinct values; the property is about order
    if not np.array_equal(np.argsort(x, axis=None, kind="stable"), np.argsort(y, axis=None, kind="stable")):
        return
    assert np.array_equal(census_transform(x, 5).codes, census_transform(y, 5).codes)


def test_census_rejects_bad_windows():
    with pytest.raises(InvalidInputError):
        census_transform(np.zeros((4, 4)), 5)
    with pytest.raises(InvalidInputError):
        census_transform(np.zeros((8, 8)), 4)
    with pytest.raises(InvalidInputError):
        census_transform(np.zeros((8, 8)), 1)
    with pytest.raises(InvalidInputError):
        census_transform(np.zeros((8, 8, 3)), 3)


# -- cost volume ----------------------------------------------------------------------

def test_identical_codes_zero_cost(rng):
    cm = census_transform(rng.uniform(0, 1, (12, 12)), 5)
    vol = build_cost_volume(cm, cm, 4)
    assert np.all(vol.cost[2:-2, 2:-2, 0] == 0)


def test_hamming_counts_bits():
    a = np.array([[0b1011]], dtype=np.uint64)
    b = np.array([[0b0001]], dtype=np.uint64)
    assert hamming(a, b) == 2
    c = np.array([0, 1 << 63], dtype=np.uint64)
    d = np.array([7, 0], dtype=np.uint64)
    assert hamming(c, d) == 4


@pytest.mark.parametrize("window", [3, 5, 9])
def test_cost_volume_matches_loops(rng, window):
    left = rng.integers(0, 5, (16, 16)).astype(float)
    right = rng.integers(0, 5, (16, 16)).astype(float)
    cl, cr = census_transform(left, window), census_transform(right, window)
    vol = build_cost_volume(cl, cr, 15)
    assert np.array_equal(vol.cost, oracles.cost_volume(cl.codes, cr.codes, window, 15))
    assert vol.sentinel == window * window - 1


def test_right_reference_mirrors_left(rng):
    left = rng.uniform(0, 1, (10, 20))
    right = rng.uniform(0, 1, (10, 20))
    vr = build_cost_volume(census_transform(left, 5), census_transform(right, 5), 6, "right")
    mirrored = build_cost_volume(census_transform(right[:, ::-1], 5), census_transform(left[:, ::-1], 5), 6)
    assert np.array_equal(vr.cost, mirrored.cost[:, ::-1])


def test_cost_volume_rejects_large_dmax(rng):
    cm = census_transform(rng.uniform(0, 1, (8, 8)), 3)
    with pytest.raises(InvalidInputError):
        build_cost_volume(cm, cm, 8)
    with pytest.raises(InvalidInputError):
        build_cost_volume(cm, cm, 2, reference="up")


# -- aggregation ------------------------------------------------------------------------

def _direct_path(cost, dy, dx, p1, p2):
    """Recursion written out per pixel."""
    h, w, nd = cost.shape
    out = np.zeros_like(cost)
    ys = range(h) if dy >= 0 else range(h - 1, -1, -1)
    xs = range(w) if dx >= 0 else range(w - 1, -1, -1)
    order = [(y, x) for y in ys for x in xs] if dy != 0 else [(y, x) for x in xs for y in ys]
    for y, x in order:
        py, px = y - dy, x - dx
        if not (0 <= py < h and 0 <= px < w):
            out[y, x] = cost[y, x]
            continue
        prev = out[py, px]
        m = prev.min()
        for d in range(nd):
            cands = [prev[d], m + p2]
            if d > 0:
                cands.append(prev[d - 1] + p1)
            if d < nd - 1:
                cands.append(prev[d + 1] + p1)
            out[y, x, d] = cost[y, x, d] + min(cands) - m
    return out


@pytest.mark.parametrize("directions", [4, 8])
def test_aggregation_matches_direct_recursion(rng, directions):
    cost = rng.integers(0, 25, (6, 7, 5)).astype(float)
    dirs = [(0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1)][:directions]
    expected = sum(_direct_path(cost, dy, dx, 3.0, 11.0) for dy, dx in dirs)
    got = sgm_aggregate(_vol(cost), SgmParams(p1=3, p2=11, directions=directions)).cost
    assert np.array_equal(got, expected)


def test_single_row_hand_instance():
    costs = np.array([[2.0, 5.0], [6.0, 1.0], [3.0, 3.0], [0.0, 4.0], [7.0, 2.0]])
    got = sgm_aggregate(_vol(costs[None]), SgmParams(p1=2, p2=5, directions=8)).cost[0]
    assert np.array_equal(got, oracles.sgm_single_row(costs, 2, 5, 8))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("directions", [4, 8])
def test_single_row_random_instances(seed, directions):
    costs = np.random.default_rng(seed).integers(0, 30, (5, 3)).astype(float)
    got = sgm_aggregate(_vol(costs[None]), SgmParams(p1=4, p2=9, directions=directions)).cost[0]
    assert np.array_equal(got, oracles.sgm_single_row(costs, 4, 9, directions))


def test_zero_penalties_keep_raw_argmin(rng):
    cost = rng.permuted(np.tile(np.arange(9.0), (5, 6, 1)), axis=2)
    agg = sgm_aggregate(_vol(cost), SgmParams(p1=0, p2=0))
    assert np.array_equal(agg.cost.argmin(axis=2), cost.argmin(axis=2))


def test_uniform_volume_gives_zero_disparity():
    disp = wta_subpixel(sgm_aggregate(_vol(np.full((4, 5, 6), 3.0)), SgmParams()))
    assert np.all(disp.disparity == 0.0)
    assert disp.low_confidence.all()


def test_sgm_params_validated():
    with pytest.raises(InvalidInputError):
        SgmParams(p1=5, p2=4)
    with pytest.raises(InvalidInputError):
        SgmParams(directions=6)
    with pytest.raises(InvalidInputError):
        SgmParams(census_window=4)


# -- winner take all ------------------------------------------------------------------------

def test_symmetric_parabola():
    d = wta_subpixel(_vol([[[9, 7, 4, 1, 4, 7]]]))
    assert d.disparity[0, 0] == 3.0 and not d.low_confidence[0, 0]


def test_parabola_offset():
    d = wta_subpixel(_vol([[[9, 4, 1, 2, 8]]]))
    assert d.disparity[0, 0] == 2.25


def test_no_refinement_at_range_ends():
    d = wta_subpixel(_vol([[[1, 2, 5], [5, 3, 0]]]))
    assert d.disparity[0].tolist() == [0.0, 2.0]


def test_tie_breaks_to_smaller_disparity():
    d = wta_subpixel(_vol([[[5, 1, 3, 1, 5], [4, 2, 2, 6, 7]]]))
    # the winner is d=1 in both; the second has a tied neighbour so no offset
    assert abs(d.disparity[0, 0] - 1.0) < 0.5
    assert d.disparity[0, 1] == 1.0
    assert d.low_confidence[0].all()


# -- left/right check --------------------------------------------------------------------------

def test_consistent_plane_survives():
    d = DisparityMap(np.full((3, 10), 2.0), np.ones((3, 10), bool))
    out = lr_consistency_check(d, d)
    assert out.valid[:, 2:].all() and not out.valid[:, :2].any()


def test_disagreement_invalidates():
    dl = DisparityMap(np.full((1, 8), 5.0), np.ones((1, 8), bool))
    dr = DisparityMap(np.full((1, 8), 9.0), np.ones((1, 8), bool))
    assert not lr_consistency_check(dl, dr, 1.0).valid.any()


def test_tolerance_is_inclusive():
    dl = DisparityMap(np.full((1, 8), 3.0), np.ones((1, 8), bool))
    dr = DisparityMap(np.full((1, 8), 4.0), np.ones((1, 8), bool))
    assert lr_consistency_check(dl, dr, 1.0).valid[0, 3:].all()


@pytest.mark.parametrize("seed", range(3))
def test_occluded_band_is_invalidated(seed):
    h, w, d_bg, d_fg = 64, 192, 2, 42
    box = (0, h, 80, 150)
    pair = make_two_layer_pair(seed, h, w, d_bg, d_fg, box)
    disp = match(pair.left, pair.right, SgmParams(), d_max=48)

    top, bottom, x0, x1 = box
    layer = np.zeros((h, w), int)
    layer[top:bottom, x0:x1] = 1

    def right_layer_at(y, u):
        return 1 if top <= y < bottom and x0 <= u + d_fg < x1 else 0

    visible = oracles.visibility_mask(pair.gt.disparity, layer, right_layer_at)
    band = np.zeros((h, w), bool)
    band[:, x0 - (d_fg - d_bg):x0] = True
    assert not visible[band].any()
    occluded = band & ~visible
    assert (~disp.valid[occluded]).mean() >= 0.95


# -- full pipeline -------------------------------------------------------------------------------

@pytest.mark.parametrize("shift", [0, 1, 3, 6])
def test_recovers_integer_shift(shift):
    pair = make_synthetic_pair(100 + shift, 48, 64, shift)
    disp = match(pair.left, pair.right, d_max=12)
    ok = disp.valid & pair.gt.valid
    assert ok.sum() > 0.7 * pair.gt.valid.sum()
    assert (np.abs(disp.disparity[ok] - shift) <= 1.0).mean() >= 0.99


def test_match_is_deterministic():
    pair = make_synthetic_pair(5, 32, 40, 2)
    a = match(pair.left, pair.right, d_max=8)
    b = match(pair.left, pair.right, d_max=8)
    assert a.disparity.tobytes() == b.disparity.tobytes()
    assert np.array_equal(a.valid, b.valid)


def test_match_rejects_mismatched_pair():
    with pytest.raises(InvalidInputError):
        match(ImageF(np.zeros((8, 8, 3))), ImageF(np.zeros((8, 9, 3))), d_max=2)
