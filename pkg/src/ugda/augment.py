"""Uncertainty-guided augmentation of RGB channel statistics.

Every image's per-channel mean and standard deviation are re-drawn from a
Gaussian centred on the original value, with a width equal to how much that
statistic varies across the current batch. The image is then re-standardised
to the drawn statistics with a per-channel affine map, so pixel ordering
inside each channel (and hence local structure) is untouched.

Work happens in two phases. :func:`batch_spread` reduces over the whole batch;
sampling and application are then independent per image and draw their
randomness from keyed substreams, so results do not depend on scheduling.
"""
from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .tensor import (
    KIND_GATE,
    KIND_MU,
    KIND_SIGMA,
    ImageBatch,
    ImageF,
    InvalidInputError,
    RngStream,
    elementwise_affine,
)

LEFT = 0
RIGHT = 1
SIDE_NAMES = {LEFT: "L", RIGHT: "R"}


class PairMode(str, enum.Enum):
    SHARED = "shared"
    INDEPENDENT = "independent"


class ClipPolicy(str, enum.Enum):
    NONE = "none"
    CLIP01 = "clip01"


@dataclass(frozen=True)
class AugmentConfig:
    pair_mode: PairMode = PairMode.SHARED
    sigma_floor: float = 1e-6
    clip_policy: ClipPolicy = ClipPolicy.NONE
    apply_probability: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "pair_mode", PairMode(self.pair_mode))
        object.__setattr__(self, "clip_policy", ClipPolicy(self.clip_policy))
        if not (0.0 <= self.apply_probability <= 1.0):
            raise InvalidInputError(f"apply_probability must be in [0, 1], got {self.apply_probability}")
        if not (self.sigma_floor > 0.0 and math.isfinite(self.sigma_floor)):
            raise InvalidInputError(f"sigma_floor must be positive, got {self.sigma_floor}")


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class BatchStatSpread:
    sigma_mu: np.ndarray
    sigma_sigma: np.ndarray


@dataclass(frozen=True)
class PerturbationDraw:
    eps_mu: np.ndarray
    eps_sigma: np.ndarray
    mu_prime: np.ndarray
    sigma_prime: np.ndarray


def channel_stats(img: ImageF) -> ChannelStats:
    """Per-channel spatial mean and population standard deviation."""
    n = img.height * img.width
    # channel-major copy keeps every reduction on contiguous memory
    planes = np.ascontiguousarray(img.data.reshape(n, img.channels).T)
    mean = planes.sum(axis=1) / n
    sq = planes - mean[:, None]
    sq *= sq
    std = np.sqrt(sq.sum(axis=1) / n)
    # rounding in the mean can leave a tiny spurious std on flat channels
    lo, hi = planes.min(axis=1), planes.max(axis=1)
    flat_ch = lo == hi
    if flat_ch.any():
        mean = np.where(flat_ch, lo, mean)
        std = np.where(flat_ch, 0.0, std)
    return ChannelStats(mean=mean, std=std)


def _population_std(values: np.ndarray) -> np.ndarray:
    if values.shape[0] == 1:
        return np.zeros(values.shape[1])
    centred = values - values.mean(axis=0)
    out = np.sqrt((centred**2).mean(axis=0))
    # identical entries must give exactly zero spread
    same = (values == values[0]).all(axis=0)
    return np.where(same, 0.0, out)


def batch_spread(batch: ImageBatch | Sequence[ImageF]) -> tuple[list[ChannelStats], BatchStatSpread]:
    if not isinstance(batch, ImageBatch):
        batch = ImageBatch(tuple(batch))
    stats = [channel_stats(im) for im in batch]
    means = np.stack([s.mean for s in stats])
    stds = np.stack([s.std for s in stats])
    return stats, BatchStatSpread(sigma_mu=_population_std(means), sigma_sigma=_population_std(stds))


def sample_perturbation(
    stats: ChannelStats,
    spread: BatchStatSpread,
    stream: RngStream,
    cfg: AugmentConfig,
    eps: tuple[Sequence[float], Sequence[float]] | None = None,
) -> PerturbationDraw:
    """Draw target statistics for one image.

    ``stream`` addresses the image; each (channel, statistic) pair reads from
    its own child substream keyed ``stream.key + (channel, kind)``. Passing
    ``eps`` bypasses sampling entirely (used by tests).
    """
    c = len(stats.mean)
    if len(spread.sigma_mu) != c or len(spread.sigma_sigma) != c:
        raise InvalidInputError("stats/spread channel count mismatch")
    if eps is None:
        eps_mu = np.array([RngStream(stream.master_seed, (*stream.key, ch, KIND_MU)).normal() for ch in range(c)])
        eps_sigma = np.array(
            [RngStream(stream.master_seed, (*stream.key, ch, KIND_SIGMA)).normal() for ch in range(c)]
        )
    else:
        eps_mu = np.asarray(eps[0], dtype=np.float64).reshape(c)
        eps_sigma = np.asarray(eps[1], dtype=np.float64).reshape(c)
    mu_prime = stats.mean + eps_mu * spread.sigma_mu
    sigma_prime = np.maximum(stats.std + eps_sigma * spread.sigma_sigma, cfg.sigma_floor)
    return PerturbationDraw(eps_mu=eps_mu, eps_sigma=eps_sigma, mu_prime=mu_prime, sigma_prime=sigma_prime)


def apply_augmentation(img: ImageF, stats: ChannelStats, draw: PerturbationDraw, cfg: AugmentConfig) -> ImageF:
    c = img.channels
    if not (len(stats.mean) == len(stats.std) == len(draw.mu_prime) == len(draw.sigma_prime) == c):
        raise InvalidInputError("stats/draw dimensions do not match the image")
    scaled = stats.std >= cfg.sigma_floor
    # degenerate (near-constant) channels are only shifted
    safe_std = np.where(scaled, stats.std, 1.0)
    gain = np.where(scaled, draw.sigma_prime / safe_std, 1.0)
    bias = np.where(scaled, draw.mu_prime - stats.mean * gain, draw.mu_prime - stats.mean)
    out = elementwise_affine(img, gain, bias)
    if cfg.clip_policy is ClipPolicy.CLIP01:
        return ImageF._trusted(np.clip(out.data, 0.0, 1.0), False)
    return ImageF._trusted(out.data, True)


@dataclass(frozen=True)
class DrawRecord:
    """One line of the draw log: what happened to a single image."""

    pair: int
    side: int
    stats: ChannelStats
    draw: PerturbationDraw | None

    @property
    def applied(self) -> bool:
        return self.draw is not None


def _gate(cfg: AugmentConfig, pair: int, side: int) -> bool:
    if cfg.apply_probability >= 1.0:
        return True
    if cfg.apply_probability <= 0.0:
        return False
    return RngStream(cfg.seed, (pair, side, 0, KIND_GATE)).uniform() < cfg.apply_probability


def augment_batch(
    pairs: Sequence,
    cfg: AugmentConfig,
    index_offset: int = 0,
) -> tuple[list[tuple[ImageF, ImageF]], list[DrawRecord]]:
    """Augment a batch of stereo pairs.

    ``pairs`` holds ``(left, right)`` tuples or objects with ``left`` and
    ``right`` attributes. Spreads are pooled over all left and right images.
    Pair ``i`` is keyed as ``index_offset + i`` so a dataset split into
    batches draws the same numbers as long as batch composition is unchanged.
    """
    if len(pairs) == 0:
        raise InvalidInputError("empty batch")
    pairs = [(p.left, p.right) if hasattr(p, "left") else tuple(p) for p in pairs]
    for left, right in pairs:
        if left.shape != right.shape:
            raise InvalidInputError(f"pair images differ in shape: {left.shape} vs {right.shape}")
    pooled = [im for p in pairs for im in p]
    stats, spread = batch_spread(pooled)

    out_pairs: list[tuple[ImageF, ImageF]] = []
    log: list[DrawRecord] = []
    for i, pair in enumerate(pairs):
        idx = index_offset + i
        outs = []
        if cfg.pair_mode is PairMode.SHARED:
            gates = [_gate(cfg, idx, LEFT)] * 2
            keys = [(idx, LEFT)] * 2
        else:
            gates = [_gate(cfg, idx, LEFT), _gate(cfg, idx, RIGHT)]
            keys = [(idx, LEFT), (idx, RIGHT)]
        for side, img in ((LEFT, pair[0]), (RIGHT, pair[1])):
            st = stats[2 * i + side]
            if not gates[side]:
                outs.append(img)
                log.append(DrawRecord(idx, side, st, None))
                continue
            draw = sample_perturbation(st, spread, RngStream(cfg.seed, keys[side]), cfg)
            outs.append(apply_augmentation(img, st, draw, cfg))
            log.append(DrawRecord(idx, side, st, draw))
        out_pairs.append((outs[0], outs[1]))
    return out_pairs, log


def augment_images(
    batch: ImageBatch | Sequence[ImageF], cfg: AugmentConfig, index_offset: int = 0
) -> tuple[list[ImageF], list[DrawRecord]]:
    """Augment an unpaired image batch; image ``i`` gets its own draw."""
    if not isinstance(batch, ImageBatch):
        batch = ImageBatch(tuple(batch))
    stats, spread = batch_spread(batch)
    out: list[ImageF] = []
    log: list[DrawRecord] = []
    for i, (img, st) in enumerate(zip(batch, stats)):
        idx = index_offset + i
        if not _gate(cfg, idx, LEFT):
            out.append(img)
            log.append(DrawRecord(idx, LEFT, st, None))
            continue
        draw = sample_perturbation(st, spread, RngStream(cfg.seed, (idx, LEFT)), cfg)
        out.append(apply_augmentation(img, st, draw, cfg))
        log.append(DrawRecord(idx, LEFT, st, draw))
    return out, log


# -- draw log serialisation ---------------------------------------------------

_PER_CHANNEL = ("mean", "std", "eps_mu", "eps_sigma", "mu_prime", "sigma_prime")


def draw_log_header(channels: int = 3) -> str:
    cols = ["pair", "side", "status"]
    cols += [f"c{c}_{name}" for c in range(channels) for name in _PER_CHANNEL]
    return "# " + "\t".join(cols)


def format_record(rec: DrawRecord) -> str:
    fields = [str(rec.pair), SIDE_NAMES[rec.side], "applied" if rec.applied else "skipped"]
    nan = float("nan")
    for c in range(len(rec.stats.mean)):
        if rec.draw is None:
            vals = (rec.stats.mean[c], rec.stats.std[c], nan, nan, nan, nan)
        else:
            d = rec.draw
            vals = (rec.stats.mean[c], rec.stats.std[c], d.eps_mu[c], d.eps_sigma[c], d.mu_prime[c], d.sigma_prime[c])
        fields += [repr(float(v)) for v in vals]
    return "\t".join(fields)


def write_draw_log(records: Iterable[DrawRecord], fh: TextIO) -> None:
    records = list(records)
    channels = len(records[0].stats.mean) if records else 3
    fh.write(draw_log_header(channels) + "\n")
    for rec in records:
        fh.write(format_record(rec) + "\n")


def read_draw_log(fh: TextIO | str) -> list[DrawRecord]:
    """Parse a log written by :func:`write_draw_log` (floats round-trip exactly)."""
    if isinstance(fh, str):
        fh = io.StringIO(fh)
    sides = {v: k for k, v in SIDE_NAMES.items()}
    out: list[DrawRecord] = []
    for lineno, line in enumerate(fh, 1):
        line = line.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if (len(parts) - 3) % len(_PER_CHANNEL) != 0:
            raise ValueError(f"draw log line {lineno}: unexpected field count {len(parts)}")
        vals = np.array([float(v) for v in parts[3:]]).reshape(-1, len(_PER_CHANNEL))
        stats = ChannelStats(mean=vals[:, 0].copy(), std=vals[:, 1].copy())
        draw = None
        if parts[2] == "applied":
            draw = PerturbationDraw(
                eps_mu=vals[:, 2].copy(), eps_sigma=vals[:, 3].copy(),
                mu_prime=vals[:, 4].copy(), sigma_prime=vals[:, 5].copy(),
            )
        elif parts[2] != "skipped":
            raise ValueError(f"draw log line {lineno}: bad status {parts[2]!r}")
        out.append(DrawRecord(int(parts[0]), sides[parts[1]], stats, draw))
    return out
