"""Disparity metrics, histograms and error maps.

EPE and D1 are evaluated over pixels valid in both maps. Sums use
``math.fsum`` so the result is the correctly rounded value regardless of
pixel order.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .dataio import save_image
from .stereo import DisparityMap
from .tensor import EmptyOverlapError, ImageF, InvalidInputError

N_BINS = 256


@dataclass(frozen=True)
class MetricReport:
    epe: float
    d1: float
    threshold: float
    n_valid: int
    n_bad: int

    def as_dict(self) -> dict[str, float | int]:
        return {"epe": self.epe, "d1": self.d1, "threshold": self.threshold,
                "n_valid": self.n_valid, "n_bad": self.n_bad}


def _joint_errors(pred: DisparityMap, gt: DisparityMap) -> np.ndarray:
    if pred.shape != gt.shape:
        raise InvalidInputError(f"disparity shapes differ: {pred.shape} vs {gt.shape}")
    joint = pred.valid & gt.valid
    if not joint.any():
        raise EmptyOverlapError("no pixel is valid in both disparity maps")
    return np.abs(pred.disparity[joint] - gt.disparity[joint])


def compute_epe(pred: DisparityMap, gt: DisparityMap) -> float:
    err = _joint_errors(pred, gt)
    return math.fsum(err.tolist()) / err.size


def compute_d1(pred: DisparityMap, gt: DisparityMap, threshold: float = 3.0) -> MetricReport:
    """Bad-pixel rate with the strict rule ``|pred - gt| > threshold``."""
    err = _joint_errors(pred, gt)
    n_bad = int(np.count_nonzero(err > threshold))
    return MetricReport(
        epe=math.fsum(err.tolist()) / err.size,
        d1=n_bad / err.size,
        threshold=float(threshold),
        n_valid=int(err.size),
        n_bad=n_bad,
    )


def aggregate_reports(reports: Sequence[MetricReport]) -> MetricReport:
    """Pixel-weighted pooling of per-pair reports sharing one threshold."""
    if not reports:
        raise InvalidInputError("no reports to aggregate")
    thresholds = {r.threshold for r in reports}
    if len(thresholds) != 1:
        raise InvalidInputError(f"cannot pool reports with thresholds {sorted(thresholds)}")
    n_valid = sum(r.n_valid for r in reports)
    n_bad = sum(r.n_bad for r in reports)
    epe = math.fsum(r.epe * r.n_valid for r in reports) / n_valid
    return MetricReport(epe=epe, d1=n_bad / n_valid, threshold=reports[0].threshold,
                        n_valid=n_valid, n_bad=n_bad)


def format_report(report: MetricReport, prefix: str = "") -> str:
    return "".join(f"{prefix}{k}={v!r}\n" for k, v in report.as_dict().items())


def write_reports_csv(fh: TextIO, rows: Iterable[tuple[str, MetricReport]]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["name", "epe", "d1", "threshold", "n_valid", "n_bad"])
    for name, r in rows:
        writer.writerow([name, repr(r.epe), repr(r.d1), repr(r.threshold), r.n_valid, r.n_bad])


# -- histograms -----------------------------------------------------------------

@dataclass(frozen=True)
class Histogram:
    """``counts[c, b]`` over ``N_BINS`` equal-width bins spanning ``[lo, hi]``."""

    counts: np.ndarray
    lo: float
    hi: float

    @property
    def n_bins(self) -> int:
        return self.counts.shape[1]

    @property
    def bin_width(self) -> float:
        return (self.hi - self.lo) / self.n_bins

    @property
    def bin_centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.n_bins) + 0.5) * self.bin_width

    @property
    def frequencies(self) -> np.ndarray:
        tot = self.counts.sum(axis=1, keepdims=True)
        return self.counts / np.maximum(tot, 1)

    def mean(self) -> np.ndarray:
        """Per-channel mean estimated from bin centers."""
        return self.frequencies @ self.bin_centers


def _bin_index(values: np.ndarray, lo: float, hi: float, n_bins: int) -> np.ndarray:
    span = hi - lo
    if span <= 0:
        return np.zeros(values.shape, dtype=np.int64)
    idx = np.floor((values - lo) / span * n_bins).astype(np.int64)
    return np.clip(idx, 0, n_bins - 1)


def image_histogram(img: ImageF, n_bins: int = N_BINS) -> Histogram:
    """Per-channel histogram over [0, 1]; out-of-range values land in the end bins."""
    flat = img.data.reshape(-1, img.channels)
    idx = _bin_index(flat, 0.0, 1.0, n_bins)
    counts = np.stack([np.bincount(idx[:, c], minlength=n_bins) for c in range(img.channels)])
    return Histogram(counts=counts, lo=0.0, hi=1.0)


def feature_histogram(features, n_bins: int = N_BINS) -> Histogram:
    """Histogram of the per-pixel channel mean over its observed range."""
    data = features.data if hasattr(features, "data") else np.asarray(features)
    avg = data.mean(axis=2).ravel()
    lo, hi = float(avg.min()), float(avg.max())
    if hi == lo:
        hi = lo + 1.0
    idx = _bin_index(avg, lo, hi, n_bins)
    return Histogram(counts=np.bincount(idx, minlength=n_bins)[None, :], lo=lo, hi=hi)


def write_histogram_csv(fh: TextIO, hist: Histogram) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["bin_center"] + [f"count_c{c}" for c in range(hist.counts.shape[0])])
    for b, center in enumerate(hist.bin_centers):
        writer.writerow([repr(float(center))] + [int(x) for x in hist.counts[:, b]])


# -- error maps -------------------------------------------------------------------

# (error / clip, RGB) stops, linearly interpolated; errors past clip saturate
ERROR_RAMP = (
    (0.0, (0.0, 0.0, 0.0)),
    (1 / 3, (0.0, 0.0, 1.0)),
    (2 / 3, (1.0, 1.0, 0.0)),
    (1.0, (1.0, 0.0, 0.0)),
)


def error_map(pred: DisparityMap, gt: DisparityMap, clip: float = 3.0) -> tuple[ImageF, float]:
    """Color-coded ``|pred - gt|``; pixels not valid in both maps are black."""
    epe = compute_epe(pred, gt)
    joint = pred.valid & gt.valid
    t = np.clip(np.abs(pred.disparity - gt.disparity) / clip, 0.0, 1.0)
    xs = np.array([s[0] for s in ERROR_RAMP])
    rgb = np.stack([np.interp(t, xs, [s[1][c] for s in ERROR_RAMP]) for c in range(3)], axis=-1)
    rgb[~joint] = 0.0
    return ImageF(rgb), epe


def write_error_map(path: str | Path, pred: DisparityMap, gt: DisparityMap, clip: float = 3.0) -> float:
    """PNG error map plus ``<path>.txt`` sidecar holding ``epe=<value>``."""
    img, epe = error_map(pred, gt, clip)
    save_image(path, img)
    Path(str(path) + ".txt").write_text(f"epe={epe!r}\n", encoding="utf-8")
    return epe
