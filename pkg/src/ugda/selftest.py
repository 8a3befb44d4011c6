"""Quick invariant suite behind ``ugda selftest``.

Each check is small enough that the whole suite runs in a few seconds; the
pytest acceptance suite runs the same properties at full size.
"""
from __future__ import annotations

import io
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import oracles
from .augment import AugmentConfig, augment_batch, augment_images, channel_stats, read_draw_log, write_draw_log
from .dataio import encode_kitti_disparity, read_kitti_disparity, read_pfm, write_kitti_disparity, write_pfm
from .gradcheck import run_gradcheck
from .metrics import compute_d1
from .stereo import CostVolume, DisparityMap, SgmParams, build_cost_volume, census_transform, sgm_aggregate
from .tensor import ImageF


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}\t{self.name}\t{self.detail}\t{self.seconds:.2f}s"


def _moment_exactness(rng: np.random.Generator) -> tuple[bool, str]:
    worst = 0.0
    for k in range(10):
        pairs = [(ImageF(rng.uniform(0, 1, (32, 32, 3))), ImageF(rng.uniform(0, 1, (32, 32, 3)))) for _ in range(2)]
        out, log = augment_batch(pairs, AugmentConfig(seed=k))
        images = [im for p in out for im in p]
        for img, rec in zip(images, log):
            st = channel_stats(img)
            worst = max(worst, float(np.abs(st.mean - rec.draw.mu_prime).max()),
                        float(np.abs(st.std - rec.draw.sigma_prime).max()))
    return worst <= 1e-9, f"max_dev={worst:.2e}"


def _zero_spread_identity(rng: np.random.Generator) -> tuple[bool, str]:
    img = ImageF(rng.uniform(0, 1, (16, 16, 3)))
    for seed in range(10):
        cfg = AugmentConfig(seed=seed)
        single, _ = augment_images([img], cfg)
        copies, _ = augment_batch([(img, img)] * 3, cfg)
        if not np.array_equal(single[0].data, img.data):
            return False, f"B=1 changed image (seed {seed})"
        if any(not np.array_equal(x.data, img.data) for p in copies for x in p):
            return False, f"identical batch changed image (seed {seed})"
    return True, "10 seeds"


def _census_affine_invariance(rng: np.random.Generator) -> tuple[bool, str]:
    for _ in range(20):
        x = rng.uniform(0, 1, (12, 12))
        gain, bias = rng.uniform(0.1, 3.0), rng.uniform(-1.0, 1.0)
        a = census_transform(x, 5).codes
        b = census_transform(gain * x + bias, 5).codes
        if not np.array_equal(a, b):
            return False, f"gain={gain:.3f} bias={bias:.3f}"
    return True, "20 images"


def _cost_volume_oracle(rng: np.random.Generator) -> tuple[bool, str]:
    left = rng.integers(0, 8, (10, 12)).astype(float)
    right = rng.integers(0, 8, (10, 12)).astype(float)
    cl, cr = census_transform(left, 5), census_transform(right, 5)
    vol = build_cost_volume(cl, cr, 6)
    ref = oracles.cost_volume(cl.codes, cr.codes, 5, 6)
    census_ok = all(
        oracles.packed_to_int(cl.codes[y, x]) == code
        for y, row in enumerate(oracles.census_codes(left, 5)) for x, code in enumerate(row) if code is not None
    )
    return census_ok and np.array_equal(vol.cost, ref), "10x12x7"


def _sgm_oracle(rng: np.random.Generator) -> tuple[bool, str]:
    costs = rng.integers(0, 20, (5, 2)).astype(float)
    vol = CostVolume(costs[None, :, :], np.ones((1, 5), bool), sentinel=24.0)
    got = sgm_aggregate(vol, SgmParams(p1=3, p2=9, directions=8)).cost[0]
    ref = oracles.sgm_single_row(costs, 3, 9, 8)
    return np.array_equal(got, ref), "1x5, d_max=1"


def _metric_oracle(rng: np.random.Generator) -> tuple[bool, str]:
    for _ in range(50):
        h, w = rng.integers(1, 24, 2)
        pred = DisparityMap(rng.uniform(0, 20, (h, w)), rng.random((h, w)) < 0.7)
        gt = DisparityMap(rng.uniform(0, 20, (h, w)), rng.random((h, w)) < 0.7)
        if not (pred.valid & gt.valid).any():
            continue
        for t in (1.0, 2.0, 3.0):
            r = compute_d1(pred, gt, t)
            ref = oracles.epe_d1(pred.disparity, pred.valid, gt.disparity, gt.valid, t)
            if (r.epe, r.d1, r.n_valid, r.n_bad) != ref:
                return False, f"{h}x{w} t={t}"
    return True, "50 maps"


def _format_round_trips(rng: np.random.Generator) -> tuple[bool, str]:
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "x.pfm"
        for little in (True, False):
            data = rng.normal(0, 100, (7, 5)).astype(np.float32)
            write_pfm(path, data, little_endian=little)
            back, _ = read_pfm(path)
            if back.tobytes() != data.tobytes():
                return False, "pfm"
        q = rng.integers(0, 65536, (6, 9)) / 256.0
        dmap = DisparityMap(q, q > 0)
        png = Path(tmp) / "d.png"
        write_kitti_disparity(png, dmap)
        back = read_kitti_disparity(png)
        if not np.array_equal(encode_kitti_disparity(back), encode_kitti_disparity(dmap)):
            return False, "kitti"
    return True, "pfm both endians, kitti png"


def _draw_log_round_trip(rng: np.random.Generator) -> tuple[bool, str]:
    pairs = [(ImageF(rng.uniform(0, 1, (8, 8, 3))), ImageF(rng.uniform(0, 1, (8, 8, 3)))) for _ in range(3)]
    _, log = augment_batch(pairs, AugmentConfig(seed=3, apply_probability=0.5))
    a = io.StringIO()
    write_draw_log(log, a)
    b = io.StringIO()
    write_draw_log(read_draw_log(a.getvalue()), b)
    return a.getvalue() == b.getvalue(), f"{len(log)} records"


def _gradients(rng: np.random.Generator) -> tuple[bool, str]:
    report = run_gradcheck(seed=int(rng.integers(1 << 31)), height=4, width=4, trials=1)
    return report.passed, f"max_rel_error={report.max_rel_error:.2e}"


CHECKS: list[tuple[str, Callable[[np.random.Generator], tuple[bool, str]]]] = [
    ("moment_exactness", _moment_exactness),
    ("zero_spread_identity", _zero_spread_identity),
    ("census_affine_invariance", _census_affine_invariance),
    ("cost_volume_oracle", _cost_volume_oracle),
    ("sgm_path_enumeration", _sgm_oracle),
    ("metric_oracle", _metric_oracle),
    ("format_round_trips", _format_round_trips),
    ("draw_log_round_trip", _draw_log_round_trip),
    ("gradient_check", _gradients),
]


def run_selftest(seed: int = 0) -> list[CheckResult]:
    results = []
    for k, (name, fn) in enumerate(CHECKS):
        rng = np.random.default_rng((seed, k))
        t0 = time.perf_counter()
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # a crash is a failed check, not a crashed suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return results

