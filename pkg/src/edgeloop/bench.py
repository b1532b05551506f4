"""Accuracy-vs-complexity benchmark and the two-iteration retraining loop.

Both experiments exercise the full deployment path: models are trained,
exported to exchange bytes, then evaluated through an edge-runtime session
on raw images, exactly as the operation side would see them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .data import Dataset, DatasetError, merge_datasets, preprocess_dataset
from .exchange import export_model
from .graph import ModelGraph
from .models import (
    SmallCnnConfig,
    build_mobile_net,
    build_residual_net,
    build_small_cnn,
    count_parameters,
)
from .preprocess import PreprocessSpec, fit_spec
from .runtime import load_session, predict
from .training import DivergedTrainingError, TrainConfig, split_train_test, train

FAMILIES = ("small", "mobile", "residual")


@dataclass(frozen=True)
class ModelSpec:
    """One benchmark entry: which family to build and how."""

    name: str
    family: str
    config: Optional[SmallCnnConfig] = None
    stages: tuple[int, ...] = (2, 2)
    base_channels: int = 16
    image_size: int = 64
    num_classes: int = 8
    stem: str = "auto"  # residual family: "auto" | "desk" | "imagenet"
    augment: Optional[bool] = None  # per-entry override of the train config

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family '{self.family}', expected one of {FAMILIES}")
        if self.family in ("small", "mobile") and self.config is None:
            raise ValueError(f"family '{self.family}' needs a SmallCnnConfig")

    @property
    def resolved_image_size(self) -> int:
        return self.config.image_size if self.config is not None else self.image_size

    def build(self, seed: int, preprocess: PreprocessSpec) -> ModelGraph:
        if self.family == "small":
            return build_small_cnn(self.config, seed=seed, preprocess=preprocess)
        if self.family == "mobile":
            return build_mobile_net(self.config, seed=seed, preprocess=preprocess)
        return build_residual_net(
            list(self.stages),
            base_channels=self.base_channels,
            num_classes=self.num_classes,
            image_size=self.image_size,
            seed=seed,
            stem=self.stem,
            preprocess=preprocess,
        )


@dataclass(frozen=True)
class TradeoffRow:
    augmented: bool
    image_size: int
    batch_size: int
    conv_blocks: int
    fc1_input: str
    fc2_input: str
    param_count: int
    test_accuracy: Optional[float]  # None when training diverged
    storage_mib: float
    error: str = ""


@dataclass
class TradeoffReport:
    rows: list[TradeoffRow]


@dataclass(frozen=True)
class LoopRow:
    model: str
    iteration: int
    op_accuracy: float
    storage_mib: float


@dataclass
class LoopReport:
    rows: list[LoopRow]


def _runtime_accuracy(blob: bytes, ds: Dataset) -> float:
    """Operation-side accuracy: raw images through a loaded session."""
    session = load_session(blob)
    correct = sum(
        predict(session, img).class_id == label
        for img, label in zip(ds.images, ds.labels)
    )
    return correct / len(ds)


def run_tradeoff_bench(
    entries: list[ModelSpec],
    data: Dataset,
    train_cfg: TrainConfig,
    test_fraction: float = 0.2,
) -> TradeoffReport:
    """Train every entry on the same split/seed and report the trade-off.

    A diverged training run is recorded on its row and the bench continues.
    Rows come back in the order given.
    """
    if len(entries) < 2:
        raise ValueError("benchmark needs at least 2 entries")
    train_ds, test_ds = split_train_test(data, test_fraction, train_cfg.seed)

    rows: list[TradeoffRow] = []
    for entry in entries:
        size = entry.resolved_image_size
        pspec = fit_spec(train_ds.images, size)
        cfg = train_cfg if entry.augment is None else replace(train_cfg, augment=entry.augment)
        g = entry.build(cfg.seed, pspec)
        train_arrays = preprocess_dataset(train_ds, pspec)
        accuracy: Optional[float] = None
        error = ""
        try:
            trained, _ = train(g, train_arrays, cfg)
            blob = export_model(trained)
            accuracy = _runtime_accuracy(blob, test_ds)
        except DivergedTrainingError as exc:
            trained, blob = g, export_model(g)
            error = str(exc)
        rows.append(TradeoffRow(
            augmented=cfg.augment,
            image_size=size,
            batch_size=cfg.batch_size,
            conv_blocks=int(trained.meta.get("conv_blocks", "0")),
            fc1_input=trained.meta.get("fc1_input", "-"),
            fc2_input=trained.meta.get("fc2_input", "-"),
            param_count=count_parameters(trained),
            test_accuracy=accuracy,
            storage_mib=len(blob) / 2**20,
            error=error,
        ))
    return TradeoffReport(rows)


def check_disjoint(eval_ds: Dataset, *train_sets: Dataset) -> None:
    """Byte-level hygiene: the evaluation images must not appear in training."""
    eval_hashes = eval_ds.content_hashes()
    for ds in train_sets:
        clash = eval_hashes & ds.content_hashes()
        if clash:
            raise DatasetError(
                f"evaluation set shares {len(clash)} image payload(s) with training data"
            )


def run_sustainability_loop(
    entries: list[ModelSpec],
    dev: Dataset,
    op: Dataset,
    train_cfg: TrainConfig,
    op_eval_fraction: float = 0.5,
) -> LoopReport:
    """Two lifecycle iterations per model.

    Iteration 1 trains on development data only and is evaluated on a
    held-out operation split; iteration 2 folds the disjoint operation
    training split back into the training data, retrains and re-exports,
    and is evaluated on the same held-out split.
    """
    if len(op) < 2 * op.num_classes:
        raise DatasetError("operation data too small to split per class")
    op_train, op_eval = split_train_test(op, op_eval_fraction, train_cfg.seed)
    merged = merge_datasets(dev, op_train)
    check_disjoint(op_eval, dev, op_train)

    rows: list[LoopRow] = []
    for entry in entries:
        size = entry.resolved_image_size
        for iteration, train_ds in ((1, dev), (2, merged)):
            pspec = fit_spec(train_ds.images, size)
            g = entry.build(train_cfg.seed, pspec)
            trained, _ = train(g, preprocess_dataset(train_ds, pspec), train_cfg)
            blob = export_model(trained)
            rows.append(LoopRow(
                model=entry.name,
                iteration=iteration,
                op_accuracy=_runtime_accuracy(blob, op_eval),
                storage_mib=len(blob) / 2**20,
            ))
    return LoopReport(rows)
