"""Minibatch training: optimizers, regimes, splits and evaluation.

Everything is seed-deterministic: the split, the per-epoch shuffle, weight
init and dropout masks all derive from explicit seeds, so a (seed, data,
config) triple reproduces the final parameters bit for bit.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset, DatasetError
from .graph import ModelGraph
from .models import classifier_param_names, feature_param_names, init_params
from .ops import GradTape, Mode, cross_entropy_loss, backward
from .preprocess import augment_geometric
from .rng import Rng


class Regime(enum.Enum):
    FEATURE_EXTRACTION = "fe"
    FINE_TUNING = "ft"
    TRAIN_FROM_SCRATCH = "tfs"


class RegimeError(ValueError):
    """Missing or shape-mismatched pretrained checkpoint for FE/FT."""


class DivergedTrainingError(RuntimeError):
    def __init__(self, epoch: int, step: int, loss: float):
        self.epoch = epoch
        self.step = step
        super().__init__(
            f"training diverged: loss {loss} is not finite at epoch {epoch}, step {step}"
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # "adam" or "sgd"
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    regime: Regime = Regime.TRAIN_FROM_SCRATCH
    seed: int = 0
    augment: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer '{self.optimizer}'")


@dataclass
class TrainReport:
    epoch_losses: list[float]
    final_test_accuracy: Optional[float]
    wall_time_s: float
    config: TrainConfig


class Sgd:
    """Plain SGD with optional momentum buffers per parameter name."""

    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self._velocity: dict[str, np.ndarray] = {}

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name in sorted(grads):
            g = grads[name]
            if self.momentum:
                v = self._velocity.get(name)
                v = g.copy() if v is None else self.momentum * v + g
                self._velocity[name] = v
                g = v
            params[name] -= np.asarray(self.lr, dtype=params[name].dtype) * g


class Adam:
    """Adam with bias correction; the step counter is shared across params."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        scale = self.lr * np.sqrt(1.0 - b2**self._t) / (1.0 - b1**self._t)
        for name in sorted(grads):
            g = grads[name].astype(np.float32)
            m = self._m.get(name, np.zeros_like(g))
            v = self._v.get(name, np.zeros_like(g))
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self._m[name], self._v[name] = m, v
            params[name] -= np.asarray(scale, dtype=np.float32) * m / (np.sqrt(v) + self.epsilon)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return Sgd(cfg.learning_rate, cfg.momentum)
    return Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon)


def split_train_test(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint, seed-deterministic, class-stratified split."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    by_class: dict[int, list[int]] = {}
    for i, label in enumerate(ds.labels):
        by_class.setdefault(label, []).append(i)
    rng = Rng(seed).derive("split")
    train_idx: list[int] = []
    test_idx: list[int] = []
    for label in sorted(by_class):
        members = by_class[label]
        if len(members) < 2:
            raise DatasetError(f"class {label} has {len(members)} sample(s); need at least 2 to split")
        k = int(round(test_fraction * len(members)))
        k = min(max(k, 1), len(members) - 1)
        perm = rng.derive(f"class{label}").permutation(len(members))
        test_idx.extend(members[i] for i in perm[:k])
        train_idx.extend(members[i] for i in perm[k:])
    return ds.subset(sorted(train_idx)), ds.subset(sorted(test_idx))


def apply_regime(
    g: ModelGraph,
    regime: Regime,
    pretrained: Optional[ModelGraph] = None,
    seed: int = 0,
) -> ModelGraph:
    """Prepare a graph for one of the three training regimes.

    Feature extraction loads the pretrained feature extractor, freezes it
    and reinitializes the classifier; fine-tuning loads the feature
    extractor, reinitializes the classifier and freezes nothing; training
    from scratch reinitializes everything (He init) and freezes nothing.
    """
    out = g.clone()
    out.frozen = set()
    if regime is Regime.TRAIN_FROM_SCRATCH:
        init_params(out, seed)
        return out

    if pretrained is None:
        raise RegimeError(f"regime {regime.value} requires a pretrained checkpoint")
    features = feature_param_names(out)
    for name in sorted(features):
        src = pretrained.params.get(name)
        if src is None or src.shape != out.params[name].shape:
            have = None if src is None else src.shape
            raise RegimeError(
                f"pretrained checkpoint does not match feature extractor: "
                f"'{name}' expects {out.params[name].shape}, checkpoint has {have}"
            )
        out.params[name][...] = src
    init_params(out, seed, names=classifier_param_names(out))
    if regime is Regime.FEATURE_EXTRACTION:
        out.frozen = features
    return out


def _augment_arrays(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    variants = augment_geometric(x)
    return np.concatenate(variants, axis=0), np.tile(y, len(variants))


def train(
    g: ModelGraph,
    data: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
    test_data: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> tuple[ModelGraph, TrainReport]:
    """Run minibatch training and return the trained graph plus a report.

    ``data`` is (tensors, labels) with tensors already through the shared
    preprocessing pipeline. The input graph is not mutated.
    """
    x, y = data
    if len(x) == 0:
        raise DatasetError("training data is empty")
    g = g.clone()
    if cfg.augment:
        x, y = _augment_arrays(x, y)

    optimizer = make_optimizer(cfg)
    rng = Rng(cfg.seed)
    updatable = sorted(g.trainable - g.frozen)
    start = time.perf_counter()
    epoch_losses: list[float] = []

    for epoch in range(cfg.epochs):
        order = rng.derive(f"shuffle.epoch{epoch}").permutation(len(x))
        drop_rng = rng.derive(f"dropout.epoch{epoch}")
        losses = []
        for step, lo in enumerate(range(0, len(x), cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            tape = GradTape()
            logits = g.forward(x[idx], mode=Mode.TRAIN, rng=drop_rng, tape=tape)
            loss, _ = cross_entropy_loss(logits, y[idx], tape=tape)
            if not np.isfinite(loss):
                raise DivergedTrainingError(epoch, step, loss)
            grads = backward(tape, 1.0)
            by_name = {}
            for name in updatable:
                grad = grads.get(g.params[name])
                if grad is not None:
                    by_name[name] = grad
            optimizer.update(g.params, by_name)
            losses.append(loss)
        epoch_losses.append(float(np.mean(losses)))

    final_acc = evaluate_accuracy(g, test_data) if test_data is not None else None
    report = TrainReport(
        epoch_losses=epoch_losses,
        final_test_accuracy=final_acc,
        wall_time_s=time.perf_counter() - start,
        config=cfg,
    )
    return g, report


def evaluate_accuracy(g: ModelGraph, data: tuple[np.ndarray, np.ndarray],
                      batch_size: int = 64) -> float:
    """Eval-mode accuracy; argmax ties resolve to the lowest class index."""
    x, y = data
    if len(x) == 0:
        raise DatasetError("evaluation data is empty")
    correct = 0
    for lo in range(0, len(x), batch_size):
        logits = g.forward(x[lo : lo + batch_size], mode=Mode.EVAL)
        correct += int((logits.argmax(axis=1) == y[lo : lo + batch_size]).sum())
    return correct / len(x)
