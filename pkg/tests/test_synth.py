"""Synthetic glyph generator: determinism, counts, domain shift."""

import numpy as np
import pytest

from edgeloop.data import load_dataset, save_dataset
from edgeloop.synth import PALETTE, SHAPES, SynthSpec, class_glyphs, generate_synthetic


def dataset_bytes(ds):
    return [img.data for img in ds.images]


class TestSpecValidation:
    def test_class_budget(self):
        with pytest.raises(ValueError, match="combinations"):
            SynthSpec(num_classes=len(SHAPES) * len(PALETTE) + 1, samples_per_class=2)

    def test_minimums(self):
        with pytest.raises(ValueError):
            SynthSpec(num_classes=1, samples_per_class=5)
        with pytest.raises(ValueError):
            SynthSpec(num_classes=4, samples_per_class=1)
        with pytest.raises(ValueError):
            SynthSpec(num_classes=4, samples_per_class=5, shift=1.5)


class TestDeterminism:
    def test_same_seed_bitwise_identical(self):
        spec = SynthSpec(num_classes=4, samples_per_class=3, image_size=32, seed=9)
        a, b = generate_synthetic(spec), generate_synthetic(spec)
        assert dataset_bytes(a) == dataset_bytes(b)
        assert a.labels == b.labels and a.names == b.names

    def test_different_seed_differs(self):
        kw = dict(num_classes=4, samples_per_class=3, image_size=32)
        a = generate_synthetic(SynthSpec(seed=1, **kw))
        b = generate_synthetic(SynthSpec(seed=2, **kw))
        assert dataset_bytes(a) != dataset_bytes(b)


class TestCounts:
    def test_k8_50_per_class_gives_400(self, tmp_path):
        spec = SynthSpec(num_classes=8, samples_per_class=50, image_size=32, seed=7)
        ds = generate_synthetic(spec)
        assert len(ds) == 400
        assert ds.num_classes == 8
        for c in range(8):
            assert sum(1 for y in ds.labels if y == c) == 50
        save_dataset(ds, tmp_path / "d")
        lines = (tmp_path / "d" / "labels.csv").read_text().strip().splitlines()
        assert len(lines) == 400
        assert len(list((tmp_path / "d" / "images").glob("*.ppm"))) == 400

    def test_save_load_roundtrip(self, tmp_path):
        ds = generate_synthetic(SynthSpec(num_classes=3, samples_per_class=2, image_size=24, seed=1))
        save_dataset(ds, tmp_path / "rt")
        back = load_dataset(tmp_path / "rt")
        assert back.labels == ds.labels and back.names == ds.names
        assert dataset_bytes(back) == dataset_bytes(ds)


class TestGlyphAssignment:
    def test_deterministic_and_distinct(self):
        spec = SynthSpec(num_classes=10, samples_per_class=2, seed=5)
        glyphs = class_glyphs(spec)
        assert glyphs == class_glyphs(spec)
        assert len(set(glyphs)) == 10

    def test_glyph_seed_decouples_classes_from_scenes(self):
        base = dict(num_classes=5, samples_per_class=2, image_size=32)
        dev = SynthSpec(seed=1, **base)
        op = SynthSpec(seed=2, glyph_seed=1, **base)
        other = SynthSpec(seed=3, glyph_seed=99, **base)
        assert class_glyphs(dev) == class_glyphs(op)
        assert class_glyphs(dev) != class_glyphs(other)
        # same classes, different scenes
        assert dataset_bytes(generate_synthetic(dev)) != dataset_bytes(generate_synthetic(op))


class TestShift:
    def test_shift_brightens_images(self):
        base = dict(num_classes=4, samples_per_class=4, image_size=32, seed=3)
        dev = generate_synthetic(SynthSpec(shift=0.0, **base))
        op = generate_synthetic(SynthSpec(shift=0.6, **base))
        dev_mean = np.mean([img.to_array().mean() for img in dev.images])
        op_mean = np.mean([img.to_array().mean() for img in op.images])
        assert op_mean > dev_mean + 15

    def test_shift_zero_untagged_as_dev(self):
        base = dict(num_classes=2, samples_per_class=2, image_size=32, seed=3)
        assert generate_synthetic(SynthSpec(shift=0.0, **base)).tag == "dev"
        assert generate_synthetic(SynthSpec(shift=0.5, **base)).tag == "op"

    def test_shifted_images_all_differ_from_dev(self):
        base = dict(num_classes=3, samples_per_class=3, image_size=32, seed=4)
        dev = generate_synthetic(SynthSpec(shift=0.0, **base))
        op = generate_synthetic(SynthSpec(shift=0.4, **base))
        assert not set(dataset_bytes(dev)) & set(dataset_bytes(op))
