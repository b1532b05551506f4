"""Labeled image datasets on disk: ``images/*.ppm`` plus ``labels.csv``.

``labels.csv`` has one ``filename,class_id`` line per image and no header.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ppm import Image, PpmError, decode_ppm, encode_ppm


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    """In-memory labeled image collection with a domain tag."""

    images: list[Image]
    labels: list[int]
    names: list[str] = field(default_factory=list)
    tag: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DatasetError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if not self.names:
            self.names = [f"img_{i:05d}.ppm" for i in range(len(self.images))]

    def __len__(self) -> int:
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return max(self.labels) + 1 if self.labels else 0

    def subset(self, indices) -> "Dataset":
        indices = list(indices)
        return Dataset(
            images=[self.images[i] for i in indices],
            labels=[self.labels[i] for i in indices],
            names=[self.names[i] for i in indices],
            tag=self.tag,
        )

    def content_hashes(self) -> set[str]:
        """SHA-256 of each image payload, for byte-disjointness checks."""
        return {hashlib.sha256(img.data).hexdigest() for img in self.images}


def save_dataset(ds: Dataset, root: str | Path) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    with open(root / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        for name, label, img in zip(ds.names, ds.labels, ds.images):
            (root / "images" / name).write_bytes(encode_ppm(img))
            writer.writerow([name, label])
    return root


def load_dataset(root: str | Path, tag: str = "") -> Dataset:
    root = Path(root)
    labels_path = root / "labels.csv"
    if not labels_path.is_file():
        raise DatasetError(f"no labels.csv under {root}")
    names: list[str] = []
    labels: list[int] = []
    with open(labels_path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 2:
                raise DatasetError(f"{labels_path}:{lineno}: expected 'filename,class_id'")
            try:
                labels.append(int(row[1]))
            except ValueError as exc:
                raise DatasetError(f"{labels_path}:{lineno}: bad class id {row[1]!r}") from exc
            names.append(row[0])
    images = []
    for name in names:
        path = root / "images" / name
        try:
            images.append(decode_ppm(path.read_bytes()))
        except FileNotFoundError as exc:
            raise DatasetError(f"listed image missing: {path}") from exc
        except PpmError as exc:
            raise DatasetError(f"{path}: {exc}") from exc
    return Dataset(images=images, labels=labels, names=names, tag=tag)


def merge_datasets(a: Dataset, b: Dataset) -> Dataset:
    """Concatenate two datasets; names get tag prefixes to stay unique."""
    return Dataset(
        images=a.images + b.images,
        labels=a.labels + b.labels,
        names=[f"{a.tag or 'a'}_{n}" for n in a.names] + [f"{b.tag or 'b'}_{n}" for n in b.names],
        tag=f"{a.tag}+{b.tag}",
    )


def preprocess_dataset(ds: Dataset, spec) -> tuple[np.ndarray, np.ndarray]:
    """Run the shared pipeline over a dataset: (N,3,S,S) tensors + labels."""
    from .preprocess import preprocess_pipeline

    xs = [preprocess_pipeline(img, spec) for img in ds.images]
    return np.concatenate(xs, axis=0), np.asarray(ds.labels, dtype=np.int64)
