"""Operation-side inference: load an exchange file, predict, measure.

A session wraps an imported graph, the preprocess spec embedded in the file
(never caller-supplied, so the two sides cannot drift) and the file's byte
size. Sessions are immutable after load and safe to share across threads;
inference always runs in Eval mode.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .exchange import OpSupportTable, import_model
from .graph import ModelGraph
from .models import preprocess_from_meta
from .ops import Mode, softmax
from .ppm import Image
from .preprocess import PreprocessSpec, preprocess_pipeline


@dataclass(frozen=True)
class Prediction:
    """Classification verdict with confidence percentages summing to 100."""

    class_id: int
    confidences: np.ndarray
    latency_s: float
    preprocess_s: float


@dataclass(frozen=True)
class LatencySummary:
    median_s: float
    p95_s: float
    runs: int


@dataclass(frozen=True)
class RuntimeSession:
    graph: ModelGraph
    spec: PreprocessSpec
    storage_bytes: int


def load_session(data: bytes, support: OpSupportTable | None = None) -> RuntimeSession:
    """Validate and import ``data``; refuses files that fail the op check."""
    graph = import_model(data, support)
    return RuntimeSession(
        graph=graph,
        spec=preprocess_from_meta(graph.meta),
        storage_bytes=len(data),
    )


def _forward_probs(session: RuntimeSession, tensor: np.ndarray) -> np.ndarray:
    logits = session.graph.forward(tensor, mode=Mode.EVAL)
    return softmax(logits)


def predict(session: RuntimeSession, img: Image) -> Prediction:
    """Preprocess with the embedded spec, run Eval forward, scale to percent."""
    t0 = time.perf_counter()
    tensor = preprocess_pipeline(img, session.spec)
    t1 = time.perf_counter()
    probs = _forward_probs(session, tensor)
    t2 = time.perf_counter()
    confidences = (probs[0] * np.float32(100.0)).astype(np.float32)
    return Prediction(
        class_id=int(confidences.argmax()),
        confidences=confidences,
        latency_s=t2 - t1,
        preprocess_s=t1 - t0,
    )


def measure_latency(
    session: RuntimeSession, img: Image, warmup: int = 3, runs: int = 30
) -> LatencySummary:
    """Median and p95 of per-forward wall time, preprocessing excluded."""
    if runs < 1:
        raise ValueError("need at least one timed run")
    tensor = preprocess_pipeline(img, session.spec)
    for _ in range(warmup):
        _forward_probs(session, tensor)
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        _forward_probs(session, tensor)
        times.append(time.perf_counter() - t0)
    times.sort()
    p95_index = max(0, int(np.ceil(0.95 * runs)) - 1)
    return LatencySummary(
        median_s=float(np.median(times)),
        p95_s=times[p95_index],
        runs=runs,
    )
