"""The four-step image preprocessing shared by training and inference.

The pipeline is resize -> center crop -> 0-1 tensor -> per-channel
standardize, in exactly that order. Both the trainer and the edge runtime
call :func:`preprocess_pipeline`; there is deliberately no second
implementation anywhere, which is what keeps the two sides bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ppm import Image


class DegenerateChannelError(ValueError):
    """A channel has zero variance; its standard deviation cannot be used."""


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel RGB mean and standard deviation of 0-1 pixel values."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("stats need exactly 3 channels")
        if any(s <= 0 for s in self.std):
            raise DegenerateChannelError(f"std must be strictly positive, got {self.std}")


@dataclass(frozen=True)
class PreprocessSpec:
    """Resize target R, crop target S and the standardization stats."""

    target_size: int
    resize_size: int
    stats: ChannelStats

    def __post_init__(self):
        if self.target_size < 1:
            raise ValueError("target_size must be >= 1")
        if self.resize_size < self.target_size:
            raise ValueError(
                f"resize_size {self.resize_size} smaller than crop target {self.target_size}"
            )


def default_spec(target_size: int, stats: ChannelStats | None = None) -> PreprocessSpec:
    """R = ceil(S / 0.9), trimming roughly the dataset's 10% ROI margin."""
    return PreprocessSpec(
        target_size=target_size,
        resize_size=math.ceil(target_size / 0.9),
        stats=stats or ChannelStats(mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0)),
    )


def resize_bilinear(img: Image, out_w: int, out_h: int) -> Image:
    """Bilinear resample with half-pixel-center mapping.

    Values are rounded half-away-from-zero back to 8 bits and clamped to
    [0, 255]; resizing to the identical dimensions is exact.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    src = img.to_array().astype(np.float64)
    h, w = img.height, img.width

    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]

    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    out = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return Image.from_array(out)


def center_crop(img: Image, size: int) -> Image:
    """Central size x size region, top-left at (floor((H-S)/2), floor((W-S)/2))."""
    if size > img.width or size > img.height:
        raise ValueError(f"crop size {size} exceeds image {img.width}x{img.height}")
    top = (img.height - size) // 2
    left = (img.width - size) // 2
    arr = img.to_array()[top : top + size, left : left + size]
    return Image.from_array(np.ascontiguousarray(arr))


def to_tensor(img: Image) -> np.ndarray:
    """(1, 3, H, W) float32 tensor with values sample/255, channels R,G,B."""
    arr = img.to_array().astype(np.float32) / np.float32(255.0)
    return arr.transpose(2, 0, 1)[None, ...].copy()


def standardize(t: np.ndarray, stats: ChannelStats) -> np.ndarray:
    """(x - mean[c]) / std[c] per channel."""
    mean = np.asarray(stats.mean, dtype=t.dtype).reshape(1, 3, 1, 1)
    std = np.asarray(stats.std, dtype=t.dtype).reshape(1, 3, 1, 1)
    return (t - mean) / std


def compute_dataset_stats(tensors) -> ChannelStats:
    """Population mean/std per channel over all pixels of all given tensors.

    Inputs are 0-1 range tensors (pipeline steps i-iii applied). A channel
    with zero variance is rejected: its std cannot standardize anything.
    """
    tensors = list(tensors)
    if not tensors:
        raise ValueError("cannot compute statistics of an empty dataset")
    per_channel = [np.concatenate([t[:, c].ravel() for t in tensors]) for c in range(3)]
    # accumulate in double, publish at single precision: the pipeline is
    # single-precision throughout and the values must survive serialization
    mean = tuple(float(np.float32(v.mean(dtype=np.float64))) for v in per_channel)
    std = tuple(float(np.float32(v.std(dtype=np.float64))) for v in per_channel)
    if any(s == 0.0 for s in std):
        ch = [i for i, s in enumerate(std) if s == 0.0]
        raise DegenerateChannelError(f"channel(s) {ch} have zero variance over the dataset")
    return ChannelStats(mean=mean, std=std)


def augment_geometric(t: np.ndarray) -> list[np.ndarray]:
    """{original, rot90, horizontal flip, vertical flip} of a square tensor."""
    if t.ndim != 4 or t.shape[2] != t.shape[3]:
        raise ValueError(f"augmentation needs square spatial dims, got {t.shape}")
    return [
        t.copy(),
        np.ascontiguousarray(np.rot90(t, k=1, axes=(2, 3))),
        np.ascontiguousarray(t[:, :, :, ::-1]),
        np.ascontiguousarray(t[:, :, ::-1, :]),
    ]


def preprocess_pipeline(img: Image, spec: PreprocessSpec) -> np.ndarray:
    """resize(R,R) -> center_crop(S) -> to_tensor -> standardize."""
    resized = resize_bilinear(img, spec.resize_size, spec.resize_size)
    cropped = center_crop(resized, spec.target_size)
    return standardize(to_tensor(cropped), spec.stats)


def fit_spec(images, target_size: int) -> PreprocessSpec:
    """Fit standardization stats over ``images`` run through steps i-iii.

    Training fits this on its train split only; the spec then travels with
    the exported model so the operation side reuses it verbatim.
    """
    base = default_spec(target_size)
    tensors = (
        to_tensor(center_crop(resize_bilinear(img, base.resize_size, base.resize_size),
                              target_size))
        for img in images
    )
    return PreprocessSpec(
        target_size=target_size,
        resize_size=base.resize_size,
        stats=compute_dataset_stats(tensors),
    )
