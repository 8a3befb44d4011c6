"""Central finite-difference verification of the hand-written loss gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .augment import AugmentConfig, augment_batch
from .consistency import (
    LossConfig,
    LossInputs,
    ToyExtractor,
    extract_features,
    layer1_preactivations,
    loss_gradients,
    total_loss,
    total_loss_from_inputs,
)
from .stereo import DisparityMap
from .tensor import ImageF

# minimum |layer-1 pre-activation| accepted for a trial; a finite-difference
# step must not push any unit across the ReLU kink
KINK_MARGIN = 1e-3
# gradients below this magnitude are compared in absolute terms
REL_FLOOR = 1e-6


@dataclass
class GradcheckReport:
    max_rel_error: float
    per_group: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-3
    trials: int = 1
    redraws: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def lines(self) -> list[str]:
        out = [f"{name}\tmax_rel_error={err:.3e}" for name, err in sorted(self.per_group.items())]
        status = "PASS" if self.passed else "FAIL"
        out.append(f"{status}\tmax_rel_error={self.max_rel_error:.3e}\ttolerance={self.tolerance:g}"
                   f"\ttrials={self.trials}\tredraws={self.redraws}")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    """Central differences of scalar ``fn`` around ``x`` (``x`` is not modified)."""
    work = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(work)
    flat, gflat = work.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = fn(work)
        flat[i] = orig - step
        fm = fn(work)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def make_trial_inputs(rng: np.random.Generator, height: int, width: int, aug_seed: int) -> LossInputs:
    """Two random stereo pairs augmented as one batch; the first pair is used."""
    pairs = [(ImageF(rng.uniform(0.05, 0.95, (height, width, 3))),
              ImageF(rng.uniform(0.05, 0.95, (height, width, 3)))) for _ in range(2)]
    augmented, _ = augment_batch(pairs, AugmentConfig(seed=aug_seed))
    gt = rng.uniform(0.0, 10.0, (height, width))
    pred = gt + rng.normal(0.0, 1.5, (height, width))
    valid = rng.random((height, width)) < 0.8
    valid.flat[0] = True
    return LossInputs(
        left=pairs[0][0].data, left_aug=augmented[0][0].data,
        right=pairs[0][1].data, right_aug=augmented[0][1].data,
        pred=DisparityMap(pred, valid), gt=DisparityMap(gt, np.ones_like(valid)),
    )


def _min_preactivation(inputs: LossInputs, ext: ToyExtractor) -> float:
    return min(float(np.abs(layer1_preactivations(x, ext)).min()) for x in inputs.images)


def check_inputs(
    inputs: LossInputs,
    ext: ToyExtractor,
    cfg: LossConfig,
    step: float = 1e-4,
    corrupt: bool = False,
) -> dict[str, float]:
    """Max relative error per parameter group for one set of inputs."""
    grads = loss_gradients(inputs, ext, cfg)
    analytic = grads.as_groups()
    if corrupt:
        analytic["w2"] = analytic["w2"] * 1.05

    names = ("left", "left_aug", "right", "right_aug")
    base = [extract_features(x, ext) for x in inputs.images]
    numeric: dict[str, np.ndarray] = {}
    for k, name in enumerate(names):
        def f_img(x, k=k):
            feats = list(base)
            feats[k] = extract_features(x, ext)
            return total_loss(inputs.pred, inputs.gt, feats, cfg)
        numeric[f"img_{name}"] = numeric_gradient(f_img, inputs.images[k], step)

    numeric["w1"] = numeric_gradient(
        lambda w: total_loss_from_inputs(inputs, ToyExtractor(w, ext.w2), cfg), ext.w1, step)
    numeric["w2"] = numeric_gradient(
        lambda w: total_loss_from_inputs(inputs, ToyExtractor(ext.w1, w), cfg), ext.w2, step)

    def f_pred(d):
        return total_loss(DisparityMap(d, inputs.pred.valid), inputs.gt, base, cfg)
    numeric["pred"] = numeric_gradient(f_pred, inputs.pred.disparity, step)

    return {name: float(relative_error(analytic[name], numeric[name]).max()) for name in analytic}


def run_gradcheck(
    seed: int = 0,
    height: int = 8,
    width: int = 8,
    trials: int = 10,
    step: float = 1e-4,
    tolerance: float = 1e-3,
    cfg: LossConfig | None = None,
    ext: ToyExtractor | None = None,
    corrupt: bool = False,
    max_redraws: int = 200,
) -> GradcheckReport:
    """Seeded trials of :func:`check_inputs`; inputs near a ReLU kink are redrawn."""
    cfg = cfg or LossConfig()
    ext = ext or ToyExtractor.from_seed()
    per_group: dict[str, float] = {}
    redraws = 0
    for trial in range(trials):
        for attempt in range(max_redraws):
            rng = np.random.default_rng((seed, trial, attempt))
            inputs = make_trial_inputs(rng, height, width, aug_seed=seed * 1000 + trial)
            if _min_preactivation(inputs, ext) > KINK_MARGIN:
                break
            redraws += 1
        else:
            raise RuntimeError("could not draw inputs away from ReLU kinks")
        for name, err in check_inputs(inputs, ext, cfg, step, corrupt).items():
            per_group[name] = max(per_group.get(name, 0.0), err)
    return GradcheckReport(
        max_rel_error=max(per_group.values()), per_group=per_group,
        tolerance=tolerance, trials=trials, redraws=redraws,
    )
