"""Readers and writers for stereo benchmark files.

Covers PFM (SceneFlow / Middlebury float maps), KITTI-style 16-bit PNG
disparities, 8/16-bit images, tab-separated manifests and procedurally
generated test scenes.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter

from .stereo import DisparityMap
from .tensor import ImageF, InvalidInputError


class FormatError(ValueError):
    """Base class for malformed-file errors."""


class PfmHeaderError(FormatError):
    pass


class PfmDimensionError(FormatError):
    pass


class PfmPayloadError(FormatError):
    """Payload length does not match the header."""


class PfmTruncatedError(PfmPayloadError):
    pass


class ImageReadError(FormatError):
    pass


class ManifestError(FormatError):
    pass


PathLike = str | os.PathLike


# -- PFM ----------------------------------------------------------------------

def _read_header_line(fh) -> bytes:
    line = fh.readline()
    if not line.endswith(b"\n"):
        raise PfmHeaderError("unexpected end of file in PFM header")
    return line.strip()


def read_pfm(path: PathLike) -> tuple[np.ndarray, float]:
    """Read a PFM file; returns ``(data, scale)`` with rows top-to-bottom.

    ``data`` is float32, shape ``(H, W)`` for ``Pf`` and ``(H, W, 3)`` for
    ``PF``. ``scale`` is the absolute value of the header scale; its sign only
    selects byte order.
    """
    with open(path, "rb") as fh:
        magic = _read_header_line(fh)
        if magic == b"PF":
            channels = 3
        elif magic == b"Pf":
            channels = 1
        else:
            raise PfmHeaderError(f"bad PFM magic {magic[:16]!r}")
        dims = _read_header_line(fh)
        m = re.fullmatch(rb"(\d+)\s+(\d+)", dims)
        if not m:
            raise PfmHeaderError(f"bad PFM dimension line {dims[:32]!r}")
        width, height = int(m.group(1)), int(m.group(2))
        if width == 0 or height == 0:
            raise PfmDimensionError(f"PFM has zero dimension: {width}x{height}")
        scale_line = _read_header_line(fh)
        try:
            scale = float(scale_line)
        except ValueError:
            raise PfmHeaderError(f"bad PFM scale line {scale_line[:32]!r}") from None
        if scale == 0.0 or not np.isfinite(scale):
            raise PfmHeaderError(f"PFM scale must be finite and nonzero, got {scale}")
        payload = fh.read()

    expected = width * height * channels * 4
    if len(payload) < expected:
        raise PfmTruncatedError(f"PFM payload has {len(payload)} bytes, header implies {expected}")
    if len(payload) > expected:
        raise PfmPayloadError(f"PFM payload has {len(payload) - expected} trailing bytes")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    data = np.frombuffer(payload, dtype=dtype).reshape(height, width, channels)
    data = np.flipud(data).astype(np.float32)
    if channels == 1:
        data = data[:, :, 0]
    return np.ascontiguousarray(data), abs(scale)


def write_pfm(path: PathLike, data: np.ndarray, scale: float = 1.0, little_endian: bool = True) -> None:
    arr = np.asarray(data)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise InvalidInputError(f"PFM holds HxW or HxWx3 data, got shape {arr.shape}")
    if scale <= 0:
        raise InvalidInputError("scale must be positive; byte order is set by little_endian")
    h, w = arr.shape[:2]
    dtype = np.dtype("<f4") if little_endian else np.dtype(">f4")
    body = np.flipud(arr.astype(np.float32)).astype(dtype).tobytes()
    signed = -abs(scale) if little_endian else abs(scale)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(f"{signed!r}\n".encode("ascii"))
        fh.write(body)


# -- KITTI disparity PNG ------------------------------------------------------

def read_kitti_disparity(path: PathLike) -> DisparityMap:
    """16-bit PNG, ``disparity = value / 256``, value 0 marks invalid."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageReadError(f"cannot decode {path}")
    if raw.dtype != np.uint16 or raw.ndim != 2:
        raise ImageReadError(f"{path}: expected single-channel 16-bit PNG, got {raw.dtype} {raw.shape}")
    return DisparityMap(disparity=raw.astype(np.float64) / 256.0, valid=raw > 0)


def encode_kitti_disparity(dmap: DisparityMap) -> np.ndarray:
    q = np.rint(np.clip(dmap.disparity, 0.0, 65535.0 / 256.0) * 256.0).astype(np.uint16)
    # valid pixels never encode as the invalid sentinel
    q = np.where(dmap.valid, np.maximum(q, 1), 0).astype(np.uint16)
    return q


def write_kitti_disparity(path: PathLike, dmap: DisparityMap) -> None:
    if not cv2.imwrite(str(path), encode_kitti_disparity(dmap)):
        raise OSError(f"failed to write {path}")


def read_disparity(path: PathLike) -> DisparityMap:
    """Ground truth by extension: PFM (non-finite = invalid) or KITTI PNG."""
    if str(path).lower().endswith(".pfm"):
        data, _ = read_pfm(path)
        if data.ndim != 2:
            raise FormatError(f"{path}: disparity PFM must be single-channel")
        disp = data.astype(np.float64)
        valid = np.isfinite(disp)
        return DisparityMap(disparity=np.where(valid, np.abs(disp), 0.0), valid=valid)
    return read_kitti_disparity(path)


def write_disparity_pfm(path: PathLike, dmap: DisparityMap) -> None:
    """Invalid pixels are written as +inf (Middlebury convention)."""
    write_pfm(path, np.where(dmap.valid, dmap.disparity, np.inf).astype(np.float32))


# -- images -------------------------------------------------------------------

def load_image(path: PathLike) -> ImageF:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageReadError(f"cannot decode image {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageReadError(f"{path}: unsupported sample type {raw.dtype}")
    if raw.ndim == 2:
        raw = np.repeat(raw[:, :, None], 3, axis=2)
    elif raw.shape[2] == 4:
        raw = raw[:, :, 2::-1]
    elif raw.shape[2] == 3:
        raw = raw[:, :, ::-1]
    elif raw.shape[2] == 1:
        raw = np.repeat(raw, 3, axis=2)
    else:
        raise ImageReadError(f"{path}: unsupported channel count {raw.shape[2]}")
    return ImageF(raw.astype(np.float64) / scale)


def to_uint8(img: ImageF) -> np.ndarray:
    """Clip to [0, 1] and quantize to 8 bits (RGB order)."""
    return np.rint(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path: PathLike, img: ImageF) -> None:
    arr = to_uint8(img)
    arr = arr[:, :, 0] if arr.shape[2] == 1 else arr[:, :, ::-1]
    if not cv2.imwrite(str(path), arr):
        raise OSError(f"failed to write {path}")


# -- manifests ----------------------------------------------------------------

DATASET_TAGS = ("sceneflow", "kitti2012", "kitti2015", "middlebury", "eth3d", "drivingstereo", "synthetic")


@dataclass(frozen=True)
class ManifestEntry:
    left: Path
    right: Path
    gt: Path | None
    tag: str

    @property
    def name(self) -> str:
        """Stable identifier derived from the left image path."""
        parts = self.left.with_suffix("").parts[-3:]
        return "_".join(parts)


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def __getitem__(self, i: int) -> ManifestEntry:
        return self.entries[i]


def read_manifest(path: PathLike, check_exists: bool = True) -> DatasetManifest:
    """Parse ``left<TAB>right<TAB>gt<TAB>tag`` lines.

    Relative paths resolve against the manifest's directory. ``gt`` may be
    empty or ``-``. Lines starting with ``#`` are comments. Entries are sorted
    by left path (string order) so iteration is platform independent.
    Paths are made absolute so entry names do not depend on the working
    directory or on how the manifest path was spelled.
    """
    base = Path(path).resolve().parent
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ManifestError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            left, right, gt, tag = parts
            if tag not in DATASET_TAGS:
                raise ManifestError(f"{path}:{lineno}: unknown dataset tag {tag!r}")
            paths = [base / left, base / right, (base / gt) if gt not in ("", "-") else None]
            if check_exists:
                for p in paths:
                    if p is not None and not p.exists():
                        raise ManifestError(f"{path}:{lineno}: missing file {p}")
            entries.append(ManifestEntry(paths[0], paths[1], paths[2], tag))
    entries.sort(key=lambda e: e.left.as_posix())
    return DatasetManifest(tuple(entries))


def write_manifest(path: PathLike, entries) -> None:
    base = Path(path).parent
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            cols = [os.path.relpath(e.left, base), os.path.relpath(e.right, base)]
            cols.append(os.path.relpath(e.gt, base) if e.gt is not None else "-")
            cols.append(e.tag)
            fh.write("\t".join(Path(c).as_posix() for c in cols[:3]) + "\t" + cols[3] + "\n")


# -- stereo pairs ---------------------------------------------------------------

@dataclass(frozen=True)
class StereoPair:
    left: ImageF
    right: ImageF
    gt: DisparityMap | None = None
    name: str = ""


def load_pair(entry: ManifestEntry) -> StereoPair:
    gt = read_disparity(entry.gt) if entry.gt is not None else None
    return StereoPair(load_image(entry.left), load_image(entry.right), gt, entry.name)


def _texture(rng: np.random.Generator, h: int, w: int, smooth: float) -> np.ndarray:
    noise = rng.standard_normal((h, w, 3))
    tex = gaussian_filter(noise, sigma=(smooth, smooth, 0), mode="wrap")
    lo = tex.min(axis=(0, 1))
    hi = tex.max(axis=(0, 1))
    tex = (tex - lo) / (hi - lo)
    # distinct per-channel tone so channel statistics differ
    gain = rng.uniform(0.5, 0.9, size=3)
    offset = rng.uniform(0.0, 1.0 - gain)
    return tex * gain + offset


def make_synthetic_pair(seed: int, height: int, width: int, shift: int, smooth: float = 1.0) -> StereoPair:
    """Random smoothed-noise texture; the right view is the left shifted by ``shift``.

    ``right[h, w - shift] == left[h, w]``. Ground truth is the constant
    ``shift`` plane; the leftmost ``shift`` columns have no correspondence
    and are masked invalid.
    """
    if shift < 0 or shift >= width:
        raise InvalidInputError(f"shift must be in [0, width), got {shift}")
    rng = np.random.default_rng(seed)
    tex = _texture(rng, height, width + shift, smooth)
    left = tex[:, :width]
    right = tex[:, shift:shift + width]
    valid = np.ones((height, width), dtype=bool)
    valid[:, :shift] = False
    gt = DisparityMap(disparity=np.full((height, width), float(shift)), valid=valid)
    return StereoPair(ImageF(left), ImageF(right), gt, f"synthetic_s{seed}_d{shift}")


def make_two_layer_pair(
    seed: int,
    height: int,
    width: int,
    d_background: int,
    d_foreground: int,
    box: tuple[int, int, int, int],
    smooth: float = 1.0,
) -> StereoPair:
    """Fronto-parallel foreground box over a background plane.

    ``box = (top, bottom, x0, x1)`` in left-image coordinates. Both layers
    carry their own texture fixed to the surface; the right view is rendered
    with the nearer (larger-disparity) surface winning.
    """
    if not 0 <= d_background < d_foreground:
        raise InvalidInputError("need 0 <= d_background < d_foreground")
    rng = np.random.default_rng(seed)
    pad = d_foreground + 1
    bg = _texture(rng, height, width + pad, smooth)
    fg = _texture(rng, height, width + pad, smooth)
    top, bottom, x0, x1 = box
    rows = np.arange(height)[:, None]
    in_rows = (rows >= top) & (rows < bottom)

    # world x coordinate == left image column
    cols = np.arange(width)[None, :]
    left_fg = in_rows & (cols >= x0) & (cols < x1)
    left = np.where(left_fg[..., None], fg[:, :width], bg[:, :width])

    # right pixel u sees surface s at world x = u + d_s
    xf = cols + d_foreground
    right_fg = in_rows & (xf >= x0) & (xf < x1)
    bg_r = bg[:, d_background:d_background + width]
    fg_r = fg[:, d_foreground:d_foreground + width]
    right = np.where(right_fg[..., None], fg_r, bg_r)

    disp = np.where(left_fg, float(d_foreground), float(d_background))
    valid = cols - disp >= 0
    gt = DisparityMap(disparity=disp, valid=np.broadcast_to(valid, (height, width)).copy())
    return StereoPair(ImageF(left), ImageF(right), gt, f"twolayer_s{seed}")


def write_synthetic_dataset(
    root: PathLike,
    shifts: Sequence[int],
    height: int = 64,
    width: int = 96,
    seed: int = 0,
    with_gt: bool = True,
) -> Path:
    """Write shift scenes as 8-bit PNG pairs plus PFM ground truth and a manifest.

    Scene ``i`` uses seed ``seed + i``. A shift of 0 gives identical views.
    Returns the manifest path.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, shift in enumerate(shifts):
        pair = make_synthetic_pair(seed + i, height, width, int(shift))
        stem = root / f"scene{i:03d}"
        left, right = stem.with_name(stem.name + "_left.png"), stem.with_name(stem.name + "_right.png")
        save_image(left, pair.left)
        save_image(right, pair.right)
        gt = None
        if with_gt:
            gt = stem.with_name(stem.name + "_disp.pfm")
            write_disparity_pfm(gt, pair.gt)
        entries.append(ManifestEntry(left, right, gt, "synthetic"))
    manifest = root / "manifest.tsv"
    write_manifest(manifest, entries)
    return manifest
