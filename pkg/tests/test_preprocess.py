"""PPM codec and the shared preprocessing pipeline."""

import numpy as np
import pytest

from edgeloop.ppm import (
    Image,
    PpmHeaderError,
    PpmMagicError,
    PpmMaxvalError,
    PpmTruncatedError,
    decode_ppm,
    encode_ppm,
)
from edgeloop.preprocess import (
    ChannelStats,
    DegenerateChannelError,
    PreprocessSpec,
    augment_geometric,
    center_crop,
    compute_dataset_stats,
    default_spec,
    fit_spec,
    preprocess_pipeline,
    resize_bilinear,
    standardize,
    to_tensor,
)
from edgeloop.rng import Rng


def random_image(seed, w=16, h=16):
    rng = np.random.default_rng(seed)
    return Image.from_array(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))


# ---------------------------------------------------------------------------
# ppm


class TestPpm:
    def test_one_pixel_red(self):
        img = decode_ppm(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
        assert (img.width, img.height) == (1, 1)
        assert img.data == bytes([255, 0, 0])

    def test_comment_between_fields(self):
        plain = decode_ppm(b"P6\n2 1\n255\n" + bytes(6))
        commented = decode_ppm(b"P6\n# cam0\n2 1\n# exposure 3\n255\n" + bytes(6))
        assert commented.data == plain.data
        assert (commented.width, commented.height) == (2, 1)

    def test_truncated_payload(self):
        with pytest.raises(PpmTruncatedError):
            decode_ppm(b"P6\n2 2\n255\n" + bytes(11))

    def test_bad_magic(self):
        with pytest.raises(PpmMagicError):
            decode_ppm(b"P5\n1 1\n255\n\x00")

    def test_wrong_maxval(self):
        with pytest.raises(PpmMaxvalError):
            decode_ppm(b"P6\n1 1\n65535\n" + bytes(6))

    def test_garbled_header(self):
        with pytest.raises(PpmHeaderError):
            decode_ppm(b"P6\nxx 1\n255\n" + bytes(3))

    def test_roundtrip_lossless(self):
        for seed in range(5):
            img = random_image(seed, w=7, h=5)
            again = decode_ppm(encode_ppm(img))
            assert again.width == img.width and again.height == img.height
            assert again.data == img.data
            assert encode_ppm(again) == encode_ppm(img)

    def test_payload_longer_than_needed_is_ignored(self):
        img = decode_ppm(b"P6\n1 1\n255\n" + bytes([1, 2, 3, 99]))
        assert img.data == bytes([1, 2, 3])


# ---------------------------------------------------------------------------
# resize / crop / tensor / standardize


class TestResize:
    def test_identity_dims(self):
        img = random_image(1)
        out = resize_bilinear(img, img.width, img.height)
        assert out.data == img.data

    def test_checkerboard_average_rounds_half_up(self):
        arr = np.zeros((2, 2, 3), np.uint8)
        arr[0, 0] = arr[1, 1] = 0
        arr[0, 1] = arr[1, 0] = 255
        out = resize_bilinear(Image.from_array(arr), 1, 1)
        assert out.to_array().ravel().tolist() == [128, 128, 128]

    def test_constant_color_any_scale(self):
        arr = np.full((5, 9, 3), 133, np.uint8)
        for w, h in [(3, 3), (17, 2), (9, 5), (1, 1)]:
            out = resize_bilinear(Image.from_array(arr), w, h)
            assert np.all(out.to_array() == 133)

    def test_upscale_shape(self):
        out = resize_bilinear(random_image(2, 4, 4), 9, 7)
        assert (out.width, out.height) == (9, 7)


class TestCrop:
    def test_full_size_identity(self):
        img = random_image(3, 8, 8)
        assert center_crop(img, 8).data == img.data

    def test_offset_arithmetic(self):
        arr = np.arange(6 * 6 * 3, dtype=np.uint8).reshape(6, 6, 3)
        out = center_crop(Image.from_array(arr), 4)
        assert np.array_equal(out.to_array(), arr[1:5, 1:5])

    def test_margin_removal_fraction(self):
        # R = ceil(S / 0.9) then cropping back to S removes ~10% per axis
        spec = default_spec(64)
        assert spec.resize_size == 72
        kept = spec.target_size**2 / spec.resize_size**2
        assert 0.75 <= kept <= 0.82  # (0.9)^2 ~ 0.79 of the resized area

    def test_too_large_crop(self):
        with pytest.raises(ValueError, match="crop"):
            center_crop(random_image(4, 4, 4), 5)


class TestTensor:
    def test_endpoints_and_midpoint(self):
        arr = np.zeros((1, 3, 3), np.uint8)  # one row, three pixels
        arr[0, 0] = 255
        arr[0, 1] = 0
        arr[0, 2] = 128
        t = to_tensor(Image.from_array(arr))
        assert t.shape == (1, 3, 1, 3)
        assert t[0, 0, 0, 0] == 1.0 and t[0, 0, 0, 1] == 0.0
        assert abs(t[0, 0, 0, 2] - 128 / 255) < 1e-7

    def test_layout_roundtrip(self):
        img = random_image(5, 6, 4)
        t = to_tensor(img)
        arr = img.to_array()
        for c in range(3):
            for y in range(img.height):
                for x in range(img.width):
                    assert t[0, c, y, x] == np.float32(arr[y, x, c] / 255.0)

    def test_standardize_identity_and_zero(self):
        t = to_tensor(random_image(6))
        ident = standardize(t, ChannelStats((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)))
        assert np.array_equal(ident, t)
        const = np.full((1, 3, 4, 4), 0.25, np.float32)
        out = standardize(const, ChannelStats((0.25, 0.25, 0.25), (0.5, 0.5, 0.5)))
        assert np.all(out == 0.0)

    def test_standardize_hand_value(self):
        t = np.ones((1, 3, 2, 2), np.float32)
        out = standardize(t, ChannelStats((0.5, 0.5, 0.5), (0.5, 0.5, 0.5)))
        assert np.all(out == 1.0)

    def test_stats_require_positive_std(self):
        with pytest.raises(DegenerateChannelError):
            ChannelStats((0.1, 0.1, 0.1), (1.0, 0.0, 1.0))


class TestDatasetStats:
    def test_constant_dataset_rejected(self):
        t = np.full((1, 3, 4, 4), 0.5, np.float32)
        with pytest.raises(DegenerateChannelError):
            compute_dataset_stats([t])

    def test_two_image_hand_computation(self):
        zeros = np.zeros((1, 3, 4, 4), np.float32)
        ones = np.ones((1, 3, 4, 4), np.float32)
        stats = compute_dataset_stats([zeros, ones])
        assert np.allclose(stats.mean, 0.5)
        assert np.allclose(stats.std, 0.5)

    def test_matches_single_pass_recompute(self):
        rng = Rng(17)
        tensors = [rng.uniform((1, 3, 5, 5)) for _ in range(12)]
        stats = compute_dataset_stats(tensors)
        stacked = np.concatenate(tensors, axis=0)
        for c in range(3):
            vals = stacked[:, c].ravel().astype(np.float64)
            assert abs(stats.mean[c] - vals.mean()) < 1e-6
            assert abs(stats.std[c] - vals.std()) < 1e-6

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            compute_dataset_stats([])


class TestAugment:
    def test_four_variants(self):
        t = Rng(0).uniform((1, 3, 6, 6))
        variants = augment_geometric(t)
        assert len(variants) == 4
        assert np.array_equal(variants[0], t)

    def test_rot90_four_times_identity(self):
        t = Rng(1).uniform((1, 3, 5, 5))
        r = t
        for _ in range(4):
            r = augment_geometric(r)[1]
        assert np.array_equal(r, t)

    def test_flips_are_involutions(self):
        t = Rng(2).uniform((2, 3, 4, 4))
        assert np.array_equal(augment_geometric(augment_geometric(t)[2])[2], t)
        assert np.array_equal(augment_geometric(augment_geometric(t)[3])[3], t)

    def test_channel_statistics_preserved(self):
        t = Rng(3).uniform((1, 3, 8, 8))
        for v in augment_geometric(t):
            for c in range(3):
                assert abs(float(v[:, c].mean()) - float(t[:, c].mean())) < 1e-7
                assert abs(float(v[:, c].std()) - float(t[:, c].std())) < 1e-7

    def test_requires_square(self):
        with pytest.raises(ValueError, match="square"):
            augment_geometric(np.zeros((1, 3, 4, 5), np.float32))


class TestPipeline:
    def test_shape_from_any_input_size(self):
        stats = ChannelStats((0.5, 0.5, 0.5), (0.25, 0.25, 0.25))
        spec = PreprocessSpec(target_size=256, resize_size=285, stats=stats)
        out = preprocess_pipeline(random_image(7, 300, 300), spec)
        assert out.shape == (1, 3, 256, 256)

    def test_table_one_512_shape(self):
        spec = default_spec(512)
        out = preprocess_pipeline(random_image(8, 600, 480), spec)
        assert out.shape == (1, 3, 512, 512)

    def test_shape_invariant_over_input_sizes(self):
        spec = default_spec(32)
        for w, h in [(32, 32), (40, 31), (100, 64), (15, 15)]:
            assert preprocess_pipeline(random_image(w * h, w, h), spec).shape == (1, 3, 32, 32)

    def test_identical_calls_bitwise_identical(self):
        spec = default_spec(32)
        img = random_image(9, 50, 40)
        a = preprocess_pipeline(img, spec)
        b = preprocess_pipeline(img, spec)
        assert np.array_equal(a, b)

    def test_spec_validation(self):
        stats = ChannelStats((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        with pytest.raises(ValueError, match="resize_size"):
            PreprocessSpec(target_size=64, resize_size=32, stats=stats)

    def test_fit_spec_uses_given_images(self):
        images = [random_image(i, 40, 40) for i in range(10)]
        spec = fit_spec(images, 32)
        assert spec.target_size == 32 and spec.resize_size == 36
        assert all(s > 0 for s in spec.stats.std)
        # fitted mean should be near the uint8 uniform mean
        assert all(abs(m - 0.5) < 0.05 for m in spec.stats.mean)
