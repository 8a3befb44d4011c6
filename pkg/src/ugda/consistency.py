"""Feature-consistency loss over a small frozen convolutional extractor.

The extractor is conv3x3(3->8) -> ReLU -> conv3x3(8->8), reflect padding,
stride 1, no bias. Its weights are drawn once from He-normal init with a
fixed seed and never trained; they exist so the loss and its gradients can
be checked end to end. Backprop is written out by hand.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .stereo import DisparityMap
from .tensor import EmptyOverlapError, ImageF, InvalidInputError

DEFAULT_EXTRACTOR_SEED = 20240917
DEFAULT_LAMBDA = 0.17


class ConsNorm(str, enum.Enum):
    FROBENIUS = "frobenius"
    MEAN_PER_ELEMENT = "mean_per_element"


@dataclass(frozen=True)
class LossConfig:
    lam: float = DEFAULT_LAMBDA
    cons_norm: ConsNorm = ConsNorm.MEAN_PER_ELEMENT
    smooth_l1_beta: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "cons_norm", ConsNorm(self.cons_norm))
        if not self.lam >= 0:
            raise InvalidInputError(f"lambda must be >= 0, got {self.lam}")
        if not self.smooth_l1_beta > 0:
            raise InvalidInputError(f"smooth_l1_beta must be > 0, got {self.smooth_l1_beta}")


@dataclass(frozen=True, eq=False)
class FeatureMap:
    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise InvalidInputError(f"feature map must be HxWxC, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise InvalidInputError("feature map contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class ToyExtractor:
    w1: np.ndarray
    w2: np.ndarray
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.w1.shape != (8, 3, 3, 3) or self.w2.shape != (8, 8, 3, 3):
            raise InvalidInputError(f"bad weight shapes {self.w1.shape}, {self.w2.shape}")

    @classmethod
    def from_seed(cls, seed: int = DEFAULT_EXTRACTOR_SEED) -> "ToyExtractor":
        rng = np.random.default_rng(seed)
        w1 = rng.standard_normal((8, 3, 3, 3)) * math.sqrt(2.0 / (3 * 9))
        w2 = rng.standard_normal((8, 8, 3, 3)) * math.sqrt(2.0 / (8 * 9))
        return cls(w1, w2, seed)


# -- convolution primitives ---------------------------------------------------------

def _pad(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((1, 1), (1, 1), (0, 0)), mode="reflect")


def conv3x3(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x`` is (H, W, Cin), ``w`` is (Cout, Cin, 3, 3); returns (H, W, Cout)."""
    win = sliding_window_view(_pad(x), (3, 3), axis=(0, 1))  # (H, W, Cin, 3, 3)
    return np.tensordot(win, w, axes=([2, 3, 4], [1, 2, 3]))


def _unpad_grad(gpad: np.ndarray, h: int, w: int) -> np.ndarray:
    """Fold a gradient w.r.t. the reflect-padded tensor back onto the input."""
    ridx = np.pad(np.arange(h), 1, mode="reflect")
    cidx = np.pad(np.arange(w), 1, mode="reflect")
    rows = np.zeros((h, gpad.shape[1], gpad.shape[2]))
    np.add.at(rows, ridx, gpad)
    out = np.zeros((h, w, gpad.shape[2]))
    np.add.at(out, (slice(None), cidx), rows)
    return out


def conv3x3_backward(x: np.ndarray, w: np.ndarray, gout: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns (grad wrt x, grad wrt w) for :func:`conv3x3`."""
    h, wd, _ = x.shape
    xp = _pad(x)
    win = sliding_window_view(xp, (3, 3), axis=(0, 1))
    gw = np.tensordot(gout, win, axes=([0, 1], [0, 1]))
    gpad = np.zeros_like(xp)
    for k in range(3):
        for l in range(3):
            gpad[k:k + h, l:l + wd] += gout @ w[:, :, k, l]
    return _unpad_grad(gpad, h, wd), gw


@dataclass
class _Forward:
    x: np.ndarray
    a1: np.ndarray
    h1: np.ndarray
    out: np.ndarray


def _forward(x: np.ndarray, ext: ToyExtractor) -> _Forward:
    a1 = conv3x3(x, ext.w1)
    h1 = np.maximum(a1, 0.0)
    return _Forward(x, a1, h1, conv3x3(h1, ext.w2))


def _backward(fw: _Forward, ext: ToyExtractor, gout: np.ndarray):
    gh1, gw2 = conv3x3_backward(fw.h1, ext.w2, gout)
    ga1 = np.where(fw.a1 > 0.0, gh1, 0.0)  # subgradient 0 at the kink
    gx, gw1 = conv3x3_backward(fw.x, ext.w1, ga1)
    return gx, gw1, gw2


def _image_array(img) -> np.ndarray:
    arr = img.data if isinstance(img, ImageF) else np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidInputError(f"extractor expects a 3-channel image, got shape {arr.shape}")
    return arr


def extract_features(img: ImageF | np.ndarray, ext: ToyExtractor | None = None) -> FeatureMap:
    ext = ext or ToyExtractor.from_seed()
    return FeatureMap(_forward(_image_array(img), ext).out)


def layer1_preactivations(img: ImageF | np.ndarray, ext: ToyExtractor) -> np.ndarray:
    return conv3x3(_image_array(img), ext.w1)


# -- losses -------------------------------------------------------------------------

def _fm(f) -> np.ndarray:
    return f.data if isinstance(f, FeatureMap) else np.asarray(f, dtype=np.float64)


def _frobenius(diff: np.ndarray) -> float:
    """Euclidean norm over all elements, scaled so tiny or huge entries neither underflow nor overflow."""
    scale = float(np.max(np.abs(diff))) if diff.size else 0.0
    if scale == 0.0:
        return 0.0
    r = diff / scale
    return scale * math.sqrt(float(np.sum(r * r)))


def _norm_term(diff: np.ndarray, norm: ConsNorm) -> float:
    n = _frobenius(diff)
    if norm is ConsNorm.MEAN_PER_ELEMENT:
        n /= math.sqrt(diff.size)
    return n


def consistency_loss(f_left, f_left_aug, f_right, f_right_aug, cfg: LossConfig | None = None) -> float:
    """``||fL - fL*|| + ||fR - fR*||`` with the Euclidean norm over all elements.

    ``mean_per_element`` divides each norm by ``sqrt(element count)``.
    """
    cfg = cfg or LossConfig()
    a, b, c, d = (_fm(f) for f in (f_left, f_left_aug, f_right, f_right_aug))
    if a.shape != b.shape or c.shape != d.shape:
        raise InvalidInputError(f"feature shape mismatch: {a.shape}/{b.shape}, {c.shape}/{d.shape}")
    return _norm_term(a - b, cfg.cons_norm) + _norm_term(c - d, cfg.cons_norm)


def _smooth_l1_terms(pred: DisparityMap, gt: DisparityMap, beta: float):
    if pred.shape != gt.shape:
        raise InvalidInputError(f"disparity shapes differ: {pred.shape} vs {gt.shape}")
    joint = pred.valid & gt.valid
    n = int(joint.sum())
    if n == 0:
        raise EmptyOverlapError("no pixel is valid in both disparity maps")
    e = np.where(joint, pred.disparity - gt.disparity, 0.0)
    return e, joint, n


def smooth_l1(pred: DisparityMap, gt: DisparityMap, beta: float = 1.0) -> float:
    e, joint, n = _smooth_l1_terms(pred, gt, beta)
    ae = np.abs(e[joint])
    per = np.where(ae < beta, 0.5 * ae * ae / beta, ae - 0.5 * beta)
    return math.fsum(per.tolist()) / n


def total_loss(pred: DisparityMap, gt: DisparityMap, features, cfg: LossConfig | None = None) -> float:
    """Disparity smooth-L1 plus ``lam`` times the consistency term.

    ``features`` is ``(f_left, f_left_aug, f_right, f_right_aug)``.
    """
    cfg = cfg or LossConfig()
    return smooth_l1(pred, gt, cfg.smooth_l1_beta) + cfg.lam * consistency_loss(*features, cfg)


# -- gradients ------------------------------------------------------------------------

@dataclass
class LossInputs:
    """Everything the total loss depends on, as raw float64 arrays."""

    left: np.ndarray
    left_aug: np.ndarray
    right: np.ndarray
    right_aug: np.ndarray
    pred: DisparityMap
    gt: DisparityMap

    @property
    def images(self) -> tuple[np.ndarray, ...]:
        return (self.left, self.left_aug, self.right, self.right_aug)


@dataclass
class LossGradients:
    images: list[np.ndarray]
    w1: np.ndarray
    w2: np.ndarray
    pred: np.ndarray
    loss: float = 0.0

    def as_groups(self) -> dict[str, np.ndarray]:
        names = ("left", "left_aug", "right", "right_aug")
        out = {f"img_{n}": g for n, g in zip(names, self.images)}
        out.update(w1=self.w1, w2=self.w2, pred=self.pred)
        return out


def total_loss_from_inputs(inputs: LossInputs, ext: ToyExtractor, cfg: LossConfig) -> float:
    feats = [extract_features(x, ext) for x in inputs.images]
    return total_loss(inputs.pred, inputs.gt, feats, cfg)


def loss_gradients(inputs: LossInputs, ext: ToyExtractor, cfg: LossConfig | None = None) -> LossGradients:
    """Reverse-mode gradients of :func:`total_loss_from_inputs`.

    The disparity prediction is treated as a leaf (the classical matcher has
    no gradient path), so image pixels and extractor weights only receive
    gradient through the consistency term.
    """
    cfg = cfg or LossConfig()
    xs = [_image_array(x) for x in inputs.images]
    fws = [_forward(x, ext) for x in xs]

    # smooth-L1 branch
    e, joint, n = _smooth_l1_terms(inputs.pred, inputs.gt, cfg.smooth_l1_beta)
    beta = cfg.smooth_l1_beta
    g_pred = np.where(np.abs(e) < beta, e / beta, np.sign(e)) / n
    g_pred = np.where(joint, g_pred, 0.0)
    loss = smooth_l1(inputs.pred, inputs.gt, beta)

    g_imgs = [np.zeros_like(x) for x in xs]
    g_w1 = np.zeros_like(ext.w1)
    g_w2 = np.zeros_like(ext.w2)
    if cfg.lam == 0.0:
        return LossGradients(g_imgs, g_w1, g_w2, g_pred, loss)

    for a, b in ((0, 1), (2, 3)):
        diff = fws[a].out - fws[b].out
        norm = _frobenius(diff)
        scale = math.sqrt(diff.size) if cfg.cons_norm is ConsNorm.MEAN_PER_ELEMENT else 1.0
        loss += cfg.lam * norm / scale
        if norm == 0.0:
            continue  # subgradient 0 at the minimum
        g = cfg.lam * diff / (norm * scale)
        for idx, gout in ((a, g), (b, -g)):
            gx, gw1, gw2 = _backward(fws[idx], ext, gout)
            g_imgs[idx] += gx
            g_w1 += gw1
            g_w2 += gw2
    return LossGradients(g_imgs, g_w1, g_w2, g_pred, loss)
