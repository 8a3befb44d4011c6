"""Slow, obviously-correct reference implementations.

Nothing here shares code with the vectorised paths it is used to check.
Loops are deliberate.
"""
from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np


def census_codes(gray: np.ndarray, window: int) -> list[list[int | None]]:
    """Python-int census code per pixel, ``None`` inside the border."""
    h, w = gray.shape
    r = window // 2
    out: list[list[int | None]] = [[None] * w for _ in range(h)]
    for y in range(r, h - r):
        for x in range(r, w - r):
            code, k = 0, 0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    if dy == 0 and dx == 0:
                        continue
                    if gray[y + dy, x + dx] < gray[y, x]:
                        code |= 1 << k
                    k += 1
            out[y][x] = code
    return out


def packed_to_int(words: np.ndarray) -> int:
    return sum(int(v) << (64 * i) for i, v in enumerate(words))


def cost_volume(left_codes: np.ndarray, right_codes: np.ndarray, window: int, d_max: int) -> np.ndarray:
    """Left-referenced Hamming volume from packed codes, one pixel at a time."""
    h, w = left_codes.shape[:2]
    r = window // 2
    sentinel = window * window - 1
    vol = np.full((h, w, d_max + 1), float(sentinel))
    for y in range(h):
        for x in range(w):
            a = packed_to_int(left_codes[y, x])
            for d in range(d_max + 1):
                if x - d >= r:
                    b = packed_to_int(right_codes[y, x - d])
                    vol[y, x, d] = bin(a ^ b).count("1")
    return vol


def _penalty(a: int, b: int, p1: float, p2: float) -> float:
    if a == b:
        return 0.0
    return p1 if abs(a - b) == 1 else p2


def path_energy_min(costs: np.ndarray, p1: float, p2: float) -> np.ndarray:
    """``E[p, d]``: min over every disparity sequence ending at (p, d) of
    data cost plus transition penalties, by exhaustive enumeration."""
    n, nd = costs.shape
    energy = np.full((n, nd), np.inf)
    for p in range(n):
        for seq in itertools.product(range(nd), repeat=p + 1):
            e = sum(costs[i, seq[i]] for i in range(p + 1))
            e += sum(_penalty(seq[i - 1], seq[i], p1, p2) for i in range(1, p + 1))
            if e < energy[p, seq[-1]]:
                energy[p, seq[-1]] = e
    return energy


def scanline_path_cost(costs: np.ndarray, p1: float, p2: float) -> np.ndarray:
    """Normalised semi-global path cost along one scanline.

    The recursive form subtracts ``min_k L(p-1, k)`` at every step; the
    accumulated offsets telescope so that ``L(p, d) = E(p, d) - min_k E(p-1, k)``.
    """
    energy = path_energy_min(costs, p1, p2)
    out = energy.copy()
    for p in range(1, costs.shape[0]):
        out[p] = energy[p] - energy[p - 1].min()
    return out


def sgm_single_row(costs: np.ndarray, p1: float, p2: float, directions: int) -> np.ndarray:
    """Aggregated volume for a 1-row image, ``costs`` shaped (W, D).

    Only the two horizontal paths have length > 1; each other direction
    contributes the raw cost.
    """
    fwd = scanline_path_cost(costs, p1, p2)
    bwd = scanline_path_cost(costs[::-1], p1, p2)[::-1]
    return fwd + bwd + (directions - 2) * costs


def epe_d1(pred: np.ndarray, pred_valid: np.ndarray, gt: np.ndarray, gt_valid: np.ndarray,
           threshold: float) -> tuple[float, float, int, int]:
    """Per-pixel loop with exact rational accumulation."""
    total = Fraction(0)
    n = bad = 0
    h, w = pred.shape
    for y in range(h):
        for x in range(w):
            if pred_valid[y, x] and gt_valid[y, x]:
                e = abs(float(pred[y, x]) - float(gt[y, x]))
                total += Fraction(e)
                n += 1
                if e > threshold:
                    bad += 1
    if n == 0:
        raise ValueError("empty overlap")
    return float(total) / n, bad / n, n, bad


def visibility_mask(disp: np.ndarray, layer_of: np.ndarray, right_layer_at) -> np.ndarray:
    """Left pixels whose corresponding right pixel shows the same surface.

    ``layer_of[y, x]`` is the surface id seen by left pixel (y, x);
    ``right_layer_at(y, u)`` returns the surface id seen by right pixel u,
    or ``None`` outside the image.
    """
    h, w = disp.shape
    vis = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            u = x - int(round(disp[y, x]))
            vis[y, x] = 0 <= u < w and right_layer_at(y, u) == layer_of[y, x]
    return vis
