"""Deterministic, implementation-independent random number generation.

All randomness in the project flows through :class:`Rng`. The generator is
counter-based: the i-th raw 64-bit draw of a stream is the splitmix64
finalizer applied to ``seed + i * GOLDEN`` (the xorshift-multiply mixer of
Steele et al.'s SplitMix64). Because each draw is a pure function of
``(seed, index)``, blocks of any size can be produced with vectorized
integer arithmetic and the sequence is trivially reproducible in any
language.

Substreams are derived by hashing a label into a fresh seed with the same
mixer, so e.g. weight init, shuffling and dropout each consume independent,
order-insensitive streams.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 output function on uint64 arrays (wrapping arithmetic)."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _hash_label(seed: int, label: str) -> int:
    h = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        for byte in label.encode("utf-8"):
            h = _mix64((h + np.uint64(byte)) * _GOLDEN)
    return int(h)


class Rng:
    """Counter-based SplitMix64 stream with numeric helpers.

    The stream state is just ``(seed, counter)``; ``raw(n)`` returns the
    next ``n`` 64-bit draws and advances the counter by ``n``.
    """

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._counter = 0

    @property
    def seed(self) -> int:
        return int(self._seed)

    def derive(self, label: str) -> "Rng":
        """Independent substream keyed by ``label`` (and this stream's seed)."""
        return Rng(_hash_label(int(self._seed), label))

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw uint64 draws."""
        with np.errstate(over="ignore"):
            idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
            out = _mix64((self._seed + idx * _GOLDEN) & _U64_MASK)
        self._counter += n
        return out

    def uniform(self, shape: tuple[int, ...] | int = ()) -> np.ndarray:
        """Uniform float32 samples in [0, 1), from the top 24 bits of each draw."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        bits = self.raw(n) >> np.uint64(40)
        vals = (bits.astype(np.float64) / 2.0**24).astype(np.float32)
        return vals.reshape(shape) if shape else vals[0]

    def normal(self, shape: tuple[int, ...] | int = (), std: float = 1.0) -> np.ndarray:
        """Standard-normal float32 samples via Box-Muller."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        m = (n + 1) // 2
        bits = self.raw(2 * m)
        # 53-bit doubles for the transform; u1 shifted off zero to keep log finite
        u1 = (bits[:m] >> np.uint64(11)).astype(np.float64) / 2.0**53
        u2 = (bits[m:] >> np.uint64(11)).astype(np.float64) / 2.0**53
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = 2.0 * np.pi * u2
        samples = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        out = (samples * std).astype(np.float32)
        return out.reshape(shape) if shape else out[0]

    def uniform_range(self, low: float, high: float, shape: tuple[int, ...] | int = ()) -> np.ndarray:
        return (self.uniform(shape) * (high - low) + low).astype(np.float32)

    def integers(self, low: int, high: int, shape: tuple[int, ...] | int = ()) -> np.ndarray:
        """Integers in [low, high) by 64-bit modulo (bias < 2**-40 for desk ranges)."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        span = np.uint64(high - low)
        vals = (self.raw(n) % span).astype(np.int64) + low
        return vals.reshape(shape) if shape else int(vals[0])

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n): argsort of n raw 64-bit keys."""
        return np.argsort(self.raw(n), kind="stable")
