"""Training-free stereo matcher: census -> Hamming cost volume -> SGM -> WTA.

This is the reference pipeline used to probe whether augmentation preserves
scene geometry. Every stage is deterministic; ties in the disparity argmin
resolve toward the smaller disparity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ImageF, InvalidInputError


@dataclass(frozen=True)
class SgmParams:
    p1: float = 10.0
    p2: float = 120.0
    directions: int = 8
    census_window: int = 5

    def __post_init__(self) -> None:
        if not (0 <= self.p1 <= self.p2):
            raise InvalidInputError(f"need 0 <= p1 <= p2, got p1={self.p1} p2={self.p2}")
        if self.directions not in (4, 8):
            raise InvalidInputError(f"directions must be 4 or 8, got {self.directions}")
        _check_window(self.census_window)


def _check_window(window: int) -> None:
    if window < 3 or window % 2 == 0:
        raise InvalidInputError(f"census window must be odd and >= 3, got {window}")


@dataclass(frozen=True, eq=False)
class CensusMap:
    """Census codes packed into 64-bit words, shape ``(H, W, n_words)``.

    Bit ``k`` of the code (word ``k // 64``, bit ``k % 64``) compares the
    ``k``-th neighbour in raster order, center excluded.
    """

    codes: np.ndarray
    valid: np.ndarray
    window: int

    @property
    def height(self) -> int:
        return self.codes.shape[0]

    @property
    def width(self) -> int:
        return self.codes.shape[1]

    @property
    def nbits(self) -> int:
        return self.window * self.window - 1

    @property
    def radius(self) -> int:
        return self.window // 2


@dataclass(frozen=True, eq=False)
class CostVolume:
    """Matching cost ``cost[h, w, d]`` plus the reference view's border mask."""

    cost: np.ndarray
    valid: np.ndarray
    sentinel: float

    @property
    def d_max(self) -> int:
        return self.cost.shape[2] - 1


@dataclass(frozen=True, eq=False)
class DisparityMap:
    disparity: np.ndarray
    valid: np.ndarray
    low_confidence: np.ndarray | None = None

    def __post_init__(self) -> None:
        disp = np.asarray(self.disparity, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if disp.shape != valid.shape or disp.ndim != 2:
            raise InvalidInputError(f"disparity {disp.shape} and mask {valid.shape} must be equal 2-D shapes")
        object.__setattr__(self, "disparity", disp)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.disparity.shape  # type: ignore[return-value]


def census_transform(gray: ImageF | np.ndarray, window: int = 5) -> CensusMap:
    img = gray.data if isinstance(gray, ImageF) else np.asarray(gray, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[2] != 1:
            raise InvalidInputError("census_transform expects a single-channel image")
        img = img[:, :, 0]
    _check_window(window)
    h, w = img.shape
    if window > h or window > w:
        raise InvalidInputError(f"census window {window} larger than image {h}x{w}")
    r = window // 2
    nbits = window * window - 1
    nwords = (nbits + 63) // 64
    codes = np.zeros((h, w, nwords), dtype=np.uint64)
    center = img[r:h - r, r:w - r]
    k = 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            neigh = img[r + dy:h - r + dy, r + dx:w - r + dx]
            bit = (neigh < center).astype(np.uint64) << np.uint64(k % 64)
            codes[r:h - r, r:w - r, k // 64] |= bit
            k += 1
    valid = np.zeros((h, w), dtype=bool)
    valid[r:h - r, r:w - r] = True
    return CensusMap(codes=codes, valid=valid, window=window)


def hamming(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Bit difference count between packed codes, summed over the last axis."""
    return np.bitwise_count(np.bitwise_xor(a, b)).sum(axis=-1, dtype=np.int64)


def build_cost_volume(left: CensusMap, right: CensusMap, d_max: int, reference: str = "left") -> CostVolume:
    """Hamming cost volume.

    With ``reference="left"``: ``cost[h, w, d] = H(left[h, w], right[h, w - d])``
    where ``w - d >= radius``. With ``reference="right"`` the roles swap and
    the match is searched at ``w + d``. Out-of-frame entries get the sentinel
    ``window**2 - 1`` (the largest possible Hamming distance).
    """
    if left.codes.shape != right.codes.shape or left.window != right.window:
        raise InvalidInputError("census maps differ in size or window")
    h, w, _ = left.codes.shape
    if d_max < 0 or d_max >= w:
        raise InvalidInputError(f"d_max must be in [0, width), got {d_max} for width {w}")
    r = left.radius
    sentinel = float(left.nbits)
    cost = np.full((h, w, d_max + 1), sentinel)
    if reference == "left":
        ref, other = left, right
        for d in range(d_max + 1):
            lo = r + d
            if lo < w:
                cost[:, lo:, d] = hamming(ref.codes[:, lo:], other.codes[:, lo - d:w - d])
    elif reference == "right":
        ref, other = right, left
        for d in range(d_max + 1):
            hi = w - r - d
            if hi > 0:
                cost[:, :hi, d] = hamming(ref.codes[:, :hi], other.codes[:, d:hi + d])
    else:
        raise InvalidInputError(f"reference must be 'left' or 'right', got {reference!r}")
    return CostVolume(cost=cost, valid=ref.valid.copy(), sentinel=sentinel)


_DIRECTIONS_4 = ((0, 1), (0, -1), (1, 0), (-1, 0))
_DIRECTIONS_8 = _DIRECTIONS_4 + ((1, 1), (1, -1), (-1, 1), (-1, -1))


def _aggregate_path(cost: np.ndarray, dy: int, dx: int, p1: float, p2: float) -> np.ndarray:
    """Path costs along direction (dy, dx); the path steps from p - r to p."""
    if dy == 0:
        return _aggregate_path(cost.transpose(1, 0, 2), dx, 0, p1, p2).transpose(1, 0, 2)
    h, w, _ = cost.shape
    out = np.empty_like(cost)
    rows = range(h) if dy > 0 else range(h - 1, -1, -1)
    rows = iter(rows)
    first = next(rows)
    out[first] = cost[first]
    for row in rows:
        prev_row = out[row - dy]
        if dx == 0:
            prev, lo, hi = prev_row, 0, w
        elif dx > 0:
            prev, lo, hi = prev_row[:w - dx], dx, w
        else:
            prev, lo, hi = prev_row[-dx:], 0, w + dx
        m = prev.min(axis=1, keepdims=True)
        best = np.minimum(prev, m + p2)
        np.minimum(best[:, 1:], prev[:, :-1] + p1, out=best[:, 1:])
        np.minimum(best[:, :-1], prev[:, 1:] + p1, out=best[:, :-1])
        out[row, lo:hi] = cost[row, lo:hi] + best - m
        # pixels whose predecessor is outside the image start a new path
        if lo > 0:
            out[row, :lo] = cost[row, :lo]
        if hi < w:
            out[row, hi:] = cost[row, hi:]
    return out


def sgm_aggregate(vol: CostVolume, params: SgmParams) -> CostVolume:
    """Sum of semi-global path costs over 4 or 8 directions (fixed order)."""
    dirs = _DIRECTIONS_4 if params.directions == 4 else _DIRECTIONS_8
    total = np.zeros_like(vol.cost)
    for dy, dx in dirs:
        total += _aggregate_path(vol.cost, dy, dx, float(params.p1), float(params.p2))
    return CostVolume(cost=total, valid=vol.valid.copy(), sentinel=vol.sentinel * len(dirs))


def wta_subpixel(vol: CostVolume) -> DisparityMap:
    cost = vol.cost
    d_max = cost.shape[2] - 1
    best = np.argmin(cost, axis=2)
    c0 = np.take_along_axis(cost, best[..., None], axis=2)[..., 0]
    low_conf = (cost == c0[..., None]).sum(axis=2) > 1

    disp = best.astype(np.float64)
    inner = (best > 0) & (best < d_max)
    if d_max >= 2 and inner.any():
        bm = np.clip(best - 1, 0, d_max)
        bp = np.clip(best + 1, 0, d_max)
        cm = np.take_along_axis(cost, bm[..., None], axis=2)[..., 0]
        cp = np.take_along_axis(cost, bp[..., None], axis=2)[..., 0]
        denom = cm - 2.0 * c0 + cp
        # a neighbour tying the minimum would put the vertex at +-0.5 exactly
        ok = inner & (denom > 0) & (cm > c0) & (cp > c0)
        offset = np.zeros_like(disp)
        np.divide(cm - cp, 2.0 * denom, out=offset, where=ok)
        disp = disp + offset
    return DisparityMap(disparity=disp, valid=vol.valid.copy(), low_confidence=low_conf)


def lr_consistency_check(d_left: DisparityMap, d_right: DisparityMap, tol: float = 1.0) -> DisparityMap:
    """Invalidate left pixels whose right-view counterpart disagrees by more than ``tol``."""
    if d_left.shape != d_right.shape:
        raise InvalidInputError("left/right disparity maps differ in shape")
    h, w = d_left.shape
    cols = np.arange(w)[None, :] - np.rint(d_left.disparity).astype(np.int64)
    inside = (cols >= 0) & (cols < w)
    safe = np.clip(cols, 0, w - 1)
    rows = np.arange(h)[:, None]
    dr = d_right.disparity[rows, safe]
    vr = d_right.valid[rows, safe]
    agree = inside & vr & (np.abs(d_left.disparity - dr) <= tol)
    return DisparityMap(
        disparity=d_left.disparity.copy(),
        valid=d_left.valid & agree,
        low_confidence=d_left.low_confidence,
    )


def match(
    left: ImageF,
    right: ImageF,
    params: SgmParams | None = None,
    d_max: int = 64,
    lr_tol: float = 1.0,
) -> DisparityMap:
    """Full pipeline on a rectified pair; returns the left-view disparity."""
    params = params or SgmParams()
    if left.shape != right.shape:
        raise InvalidInputError(f"pair images differ in shape: {left.shape} vs {right.shape}")
    cl = census_transform(left.to_gray(), params.census_window)
    cr = census_transform(right.to_gray(), params.census_window)
    d_l = wta_subpixel(sgm_aggregate(build_cost_volume(cl, cr, d_max, "left"), params))
    d_r = wta_subpixel(sgm_aggregate(build_cost_volume(cl, cr, d_max, "right"), params))
    return lr_consistency_check(d_l, d_r, lr_tol)
