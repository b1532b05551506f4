"""Edge runtime: sessions, predictions, latency measurement, statelessness."""

import threading

import numpy as np
import pytest

from edgeloop.exchange import UnsupportedOpError, export_model
from edgeloop.models import (
    SmallCnnConfig,
    build_residual_net,
    build_small_cnn,
    replace_flatten_with_reshape,
)
from edgeloop.ppm import Image
from edgeloop.runtime import load_session, measure_latency, predict
from edgeloop.rng import Rng

TINY = SmallCnnConfig(image_size=32, num_conv_blocks=2, base_channels=4, fc1_out=8, num_classes=4)


def sample_image(seed: int, size: int = 40) -> Image:
    rng = np.random.default_rng(seed)
    return Image.from_array(rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8))


@pytest.fixture(scope="module")
def session():
    return load_session(export_model(build_small_cnn(TINY, seed=8)))


class TestLoadSession:
    def test_records_storage_bytes(self):
        blob = export_model(build_small_cnn(TINY, seed=0))
        s = load_session(blob)
        assert s.storage_bytes == len(blob)

    def test_refuses_invalid_file(self):
        g = replace_flatten_with_reshape(build_small_cnn(TINY, seed=0))
        with pytest.raises(UnsupportedOpError):
            load_session(export_model(g))

    def test_reload_behaves_identically(self, session):
        blob = export_model(build_small_cnn(TINY, seed=8))
        again = load_session(blob)
        img = sample_image(1)
        a, b = predict(session, img), predict(again, img)
        assert a.class_id == b.class_id
        assert np.array_equal(a.confidences, b.confidences)

    def test_spec_comes_from_file_metadata(self, session):
        assert session.spec.target_size == TINY.image_size


class TestPredict:
    def test_same_image_same_prediction(self, session):
        img = sample_image(2)
        a, b = predict(session, img), predict(session, img)
        assert a.class_id == b.class_id
        assert np.array_equal(a.confidences, b.confidences)

    def test_uniform_logits_give_equal_percentages(self):
        g = build_small_cnn(TINY, seed=0)
        g.params["classifier.fc2.weight"][...] = 0.0
        g.params["classifier.fc2.bias"][...] = 0.0
        s = load_session(export_model(g))
        pred = predict(s, sample_image(3))
        assert np.abs(pred.confidences - 100.0 / TINY.num_classes).max() < 1e-3
        assert pred.class_id == 0  # tie -> lowest index

    def test_confidences_sum_to_100(self, session):
        for seed in range(25):
            pred = predict(session, sample_image(seed))
            assert abs(float(pred.confidences.sum()) - 100.0) < 1e-3
            assert pred.confidences.min() >= 0.0
            assert pred.class_id == int(pred.confidences.argmax())

    def test_latency_fields_populated(self, session):
        pred = predict(session, sample_image(4))
        assert pred.latency_s > 0.0
        assert pred.preprocess_s > 0.0


class TestMeasureLatency:
    def test_single_run_median_is_that_run(self, session):
        summary = measure_latency(session, sample_image(5), warmup=1, runs=1)
        assert summary.runs == 1
        assert summary.median_s == summary.p95_s > 0.0

    def test_p95_at_least_median(self, session):
        summary = measure_latency(session, sample_image(6), warmup=2, runs=10)
        assert summary.p95_s >= summary.median_s

    def test_zero_runs_rejected(self, session):
        with pytest.raises(ValueError, match="run"):
            measure_latency(session, sample_image(7), runs=0)

    def test_residual_slower_than_tiny_small(self):
        small = load_session(export_model(build_small_cnn(TINY, seed=0)))
        res = load_session(export_model(
            build_residual_net([2, 2], base_channels=16, num_classes=4, image_size=32, seed=0)))
        img = sample_image(8)
        t_small = measure_latency(small, img, warmup=2, runs=7)
        t_res = measure_latency(res, img, warmup=2, runs=7)
        assert t_small.median_s < t_res.median_s

    def test_doubling_input_size_increases_latency(self):
        def session_at(size):
            cfg = SmallCnnConfig(image_size=size, num_conv_blocks=2, base_channels=8,
                                 fc1_out=16, num_classes=4)
            return load_session(export_model(build_small_cnn(cfg, seed=0)))

        img = sample_image(9, size=160)
        t32 = measure_latency(session_at(32), img, warmup=2, runs=9)
        t64 = measure_latency(session_at(64), img, warmup=2, runs=9)
        assert t32.median_s < t64.median_s


class TestStatelessness:
    def test_threaded_predictions_match_sequential(self, session):
        images = [sample_image(i) for i in range(40)]
        sequential = [predict(session, img) for img in images]

        results: dict[int, list] = {}
        def worker(tid: int):
            # each caller interleaves over the shared session
            results[tid] = [predict(session, img) for img in images[tid::4]]

        threads = [threading.Thread(target=worker, args=(t,)) for t in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        for tid in range(4):
            for got, want in zip(results[tid], sequential[tid::4]):
                assert got.class_id == want.class_id
                assert np.array_equal(got.confidences, want.confidences)
