"""Synthetic glyph datasets with a controllable development->operation shift.

Classes are distinct shape x color combinations (circle, triangle, square,
diamond against a six-color palette) drawn at randomized position and scale
over noisy backgrounds. ``shift`` in [0, 1] moves a dataset toward the
operation domain by adding blur, a brightness offset and sensor-style noise
scaled with the shift strength. ``glyph_seed`` fixes the class-to-glyph
assignment independently of scene randomness, so a shifted operation set
can share class semantics with its development set while every image is
fresh.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset
from .ppm import Image
from .rng import Rng

SHAPES = ("circle", "triangle", "square", "diamond")
PALETTE = (
    (225, 60, 60),
    (60, 205, 60),
    (70, 95, 230),
    (235, 220, 70),
    (215, 70, 215),
    (70, 215, 215),
)


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int
    samples_per_class: int
    image_size: int = 64
    shift: float = 0.0
    seed: int = 0
    glyph_seed: Optional[int] = None

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.num_classes > len(SHAPES) * len(PALETTE):
            raise ValueError(
                f"{self.num_classes} classes exceed the {len(SHAPES) * len(PALETTE)} "
                "available shape x color combinations"
            )
        if self.samples_per_class < 2:
            raise ValueError("need at least 2 samples per class")
        if not 0.0 <= self.shift <= 1.0:
            raise ValueError(f"shift must be in [0, 1], got {self.shift}")
        if self.image_size < 16:
            raise ValueError("image_size must be >= 16")


def class_glyphs(spec: SynthSpec) -> list[tuple[str, tuple[int, int, int]]]:
    """Deterministic class -> (shape, color) assignment from the glyph seed."""
    combos = [(shape, color) for shape in SHAPES for color in PALETTE]
    key = spec.seed if spec.glyph_seed is None else spec.glyph_seed
    order = Rng(key).derive("glyphs").permutation(len(combos))
    return [combos[i] for i in order[: spec.num_classes]]


def _shape_mask(shape: str, size: int, cx: float, cy: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    if shape == "circle":
        return dx * dx + dy * dy <= r * r
    if shape == "square":
        return (np.abs(dx) <= 0.82 * r) & (np.abs(dy) <= 0.82 * r)
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= 1.15 * r
    # upward triangle: width grows linearly from apex to base
    t = (dy + r) / (2.0 * r)
    return (t >= 0) & (t <= 1) & (np.abs(dx) <= t * r)


def _box_blur(arr: np.ndarray, halfwidth: int) -> np.ndarray:
    """Separable box blur with edge padding; arr is (H, W, 3) float."""
    if halfwidth < 1:
        return arr
    k = 2 * halfwidth + 1
    for axis in (0, 1):
        pad = [(0, 0)] * arr.ndim
        pad[axis] = (halfwidth, halfwidth)
        padded = np.pad(arr, pad, mode="edge")
        csum = np.cumsum(padded, axis=axis, dtype=np.float64)
        lead = [slice(None)] * arr.ndim
        trail = [slice(None)] * arr.ndim
        lead[axis] = slice(k, None)
        trail[axis] = slice(None, -k)
        head = [slice(None)] * arr.ndim
        head[axis] = slice(k - 1, k)
        first = csum[tuple(head)]
        arr = np.concatenate([first, csum[tuple(lead)] - csum[tuple(trail)]], axis=axis) / k
    return arr


def _render(spec: SynthSpec, shape: str, color: tuple[int, int, int], rng: Rng) -> Image:
    size = spec.image_size
    bg_level = float(rng.uniform_range(45.0, 115.0))
    arr = np.full((size, size, 3), bg_level, dtype=np.float64)
    arr += rng.uniform_range(-16.0, 16.0, (size, size, 3)).astype(np.float64)

    cx = size * (0.5 + float(rng.uniform_range(-0.12, 0.12)))
    cy = size * (0.5 + float(rng.uniform_range(-0.12, 0.12)))
    r = size * float(rng.uniform_range(0.24, 0.38))
    jitter = rng.uniform_range(-18.0, 18.0, (3,)).astype(np.float64)
    mask = _shape_mask(shape, size, cx, cy, r)
    arr[mask] = np.clip(np.asarray(color, dtype=np.float64) + jitter, 0, 255)

    s = spec.shift
    if s > 0:
        halfwidth = int(round(2.5 * s * size / 64.0))
        arr = _box_blur(arr, halfwidth)
        arr = arr + 70.0 * s
        arr = arr + rng.normal((size, size, 3), std=28.0 * s).astype(np.float64)

    return Image.from_array(np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8))


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Class-balanced glyph dataset, deterministic in the spec."""
    glyphs = class_glyphs(spec)
    master = Rng(spec.seed)
    images: list[Image] = []
    labels: list[int] = []
    names: list[str] = []
    for k, (shape, color) in enumerate(glyphs):
        for j in range(spec.samples_per_class):
            rng = master.derive(f"img.{k}.{j}")
            images.append(_render(spec, shape, color, rng))
            labels.append(k)
            names.append(f"c{k:02d}_{j:04d}.ppm")
    tag = "dev" if spec.shift == 0 else "op"
    return Dataset(images=images, labels=labels, names=names, tag=tag)
