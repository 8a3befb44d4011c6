"""Image containers, keyed random streams and small numeric kernels.

Images are stored as ``(H, W, C)`` float64 arrays. Containers copy their
input on construction and hold a read-only array, so every function in the
package can treat them as values.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's precondition."""


class EmptyOverlapError(InvalidInputError):
    """No pixel is valid in both disparity maps."""


@dataclass(frozen=True, eq=False)
class ImageF:
    data: np.ndarray
    augmented_unclipped: bool = False

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise InvalidInputError(f"image must be HxW or HxWxC, got shape {arr.shape}")
        h, w, c = arr.shape
        if h < 1 or w < 1:
            raise InvalidInputError(f"image dims must be positive, got {h}x{w}")
        if c not in (1, 3):
            raise InvalidInputError(f"image must have 1 or 3 channels, got {c}")
        if not np.isfinite(arr).all():
            raise InvalidInputError("image contains non-finite values")
        if not self.augmented_unclipped and arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise InvalidInputError(
                "values outside [0, 1] require augmented_unclipped=True"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def _trusted(cls, arr: np.ndarray, augmented_unclipped: bool = False) -> "ImageF":
        # internal fast path: arr is a fresh float64 HxWxC array owned by the caller
        obj = object.__new__(cls)
        arr.flags.writeable = False
        object.__setattr__(obj, "data", arr)
        object.__setattr__(obj, "augmented_unclipped", augmented_unclipped)
        return obj

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    def channel(self, c: int) -> np.ndarray:
        return self.data[:, :, c]

    def to_gray(self) -> "ImageF":
        """Luma conversion with weights 0.299/0.587/0.114."""
        if self.channels == 1:
            return self
        gray = self.data @ LUMA_WEIGHTS
        return ImageF._trusted(gray[:, :, None], self.augmented_unclipped)

    def same_as(self, other: "ImageF") -> bool:
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)


LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class ImageBatch:
    images: tuple[ImageF, ...]

    def __post_init__(self) -> None:
        images = tuple(self.images)
        if not images:
            raise InvalidInputError("batch must contain at least one image")
        chans = {im.channels for im in images}
        if len(chans) != 1:
            raise InvalidInputError(f"mixed channel counts in batch: {sorted(chans)}")
        object.__setattr__(self, "images", images)

    def __len__(self) -> int:
        return len(self.images)

    def __iter__(self) -> Iterator[ImageF]:
        return iter(self.images)

    def __getitem__(self, i: int) -> ImageF:
        return self.images[i]


# statistic kinds used in substream keys
KIND_MU = 0
KIND_SIGMA = 1
KIND_GATE = 2


@dataclass
class RngStream:
    """A reproducible random stream addressed by ``(master_seed, key)``.

    The underlying generator is Philox (counter-based) seeded through a
    ``SeedSequence`` whose spawn key is ``key``. Two streams with equal seed
    and key produce the same sequence no matter when or where they are
    created, which is what lets batch work be split across threads.
    """

    master_seed: int
    key: tuple[int, ...] = ()
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        seed = int(self.master_seed) & 0xFFFFFFFFFFFFFFFF
        key = tuple(int(k) for k in self.key)
        if any(k < 0 for k in key):
            raise InvalidInputError(f"stream key entries must be non-negative: {key}")
        ss = np.random.SeedSequence(entropy=seed, spawn_key=key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def normal(self, size: int | None = None):
        if size is None:
            return float(self._gen.standard_normal())
        return self._gen.standard_normal(size)

    def uniform(self) -> float:
        return float(self._gen.random())


def gaussian_draw(stream: RngStream) -> float:
    """Return one standard-normal variate and advance ``stream``."""
    return stream.normal()


def _as_channel_vector(v, c: int, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(v, dtype=np.float64), (c,))
    if not np.isfinite(arr).all():
        raise InvalidInputError(f"{name} must be finite, got {arr}")
    return arr


def elementwise_affine(img: ImageF, gain: Sequence[float] | float, bias: Sequence[float] | float) -> ImageF:
    """Per-channel ``gain[c] * x + bias[c]``."""
    g = _as_channel_vector(gain, img.channels, "gain")
    b = _as_channel_vector(bias, img.channels, "bias")
    out = np.multiply(img.data, g)
    out += b
    lo, hi = out.min(), out.max()
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise InvalidInputError("affine map produced non-finite values")
    unclipped = img.augmented_unclipped or bool(lo < 0.0 or hi > 1.0)
    return ImageF._trusted(out, unclipped)
