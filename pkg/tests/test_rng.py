import numpy as np

from edgeloop.rng import Rng


def test_same_seed_same_stream():
    a, b = Rng(42), Rng(42)
    assert np.array_equal(a.raw(100), b.raw(100))
    assert np.array_equal(Rng(42).uniform((50,)), Rng(42).uniform((50,)))


def test_different_seeds_differ():
    assert not np.array_equal(Rng(1).raw(64), Rng(2).raw(64))


def test_stream_is_counter_based():
    whole = Rng(7).raw(100)
    r = Rng(7)
    parts = np.concatenate([r.raw(10), r.raw(90)])
    assert np.array_equal(whole, parts)


def test_derive_is_independent_and_stable():
    a = Rng(3).derive("weights").uniform((20,))
    b = Rng(3).derive("weights").uniform((20,))
    c = Rng(3).derive("dropout").uniform((20,))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_uniform_range_and_dtype():
    u = Rng(11).uniform((10_000,))
    assert u.dtype == np.float32
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(float(u.mean()) - 0.5) < 0.02


def test_normal_moments():
    z = Rng(13).normal((100_000,))
    assert abs(float(z.mean())) < 0.02
    assert abs(float(z.std()) - 1.0) < 0.02


def test_permutation_is_a_permutation():
    p = Rng(5).permutation(257)
    assert sorted(p.tolist()) == list(range(257))
    assert np.array_equal(p, Rng(5).permutation(257))


def test_integers_in_range():
    v = Rng(9).integers(3, 9, (1000,))
    assert v.min() >= 3 and v.max() < 9
    assert set(np.unique(v)) == set(range(3, 9))
