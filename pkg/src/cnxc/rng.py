"""Deterministic pseudo-random numbers for weight init, shuffling and augmentation.

The generator is SplitMix64 (Steele, Lea & Flood 2014; the seeding generator of
the xoshiro family and of Java's SplittableRandom): the i-th raw output is

    out_i = mix64(seed + i * 0x9E3779B97F4A7C15)        (all mod 2**64)

where mix64 is the murmur-style finalizer

    z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27;  z *= 0x94D049BB133111EB
    z ^= z >> 31

Because output i depends only on (seed, i), blocks of any size can be produced
vectorised with numpy uint64 arithmetic and are bit-identical to drawing the
values one at a time. No platform entropy is consumed after seeding, so equal
seeds give equal streams on every machine.

Normal deviates use the Box-Muller transform on consecutive uniform pairs
(never a platform normal source), so He initialisation is reproducible
bit-for-bit across builds.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)

# FNV-1a 64-bit, used only to fold string labels into derived seeds.
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


class Rng:
    """Seedable SplitMix64 stream with uniform/normal/shuffle helpers."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._count = 0  # raw uint64 outputs consumed so far

    def raw(self, n: int) -> np.ndarray:
        """Next n raw uint64 outputs, vectorised."""
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            states = np.uint64(self.seed) + idx * np.uint64(_GAMMA)
        return _mix64(states)

    def uniform(self, n: int | None = None, lo: float = 0.0, hi: float = 1.0):
        """Uniform floats in [lo, hi) from the top 53 bits of each output."""
        m = 1 if n is None else n
        u = (self.raw(m) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        out = lo + u * (hi - lo)
        return float(out[0]) if n is None else out

    def normal(self, n: int) -> np.ndarray:
        """Standard normal deviates via Box-Muller on consecutive pairs.

        Consumes 2*ceil(n/2) raw outputs; pair (u1, u2) yields
        (r*cos(2*pi*u2), r*sin(2*pi*u2)) with r = sqrt(-2*ln(u1)).
        u1 is offset by half an ulp so it is strictly positive.
        """
        pairs = (n + 1) // 2
        bits = self.raw(2 * pairs) >> np.uint64(11)
        u1 = (bits[0::2].astype(np.float64) + 0.5) * _INV_2_53
        u2 = bits[1::2].astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(ang)
        out[1::2] = r * np.sin(ang)
        return out[:n]

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p

    def randbelow(self, n: int) -> int:
        """Integer in [0, n) as floor(u*n); 53-bit uniforms make bias negligible."""
        return min(int(self.uniform() * n), n - 1)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates using one pre-drawn uniform per swap."""
        n = len(items)
        if n < 2:
            return
        u = self.uniform(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            items[i], items[j] = items[j], items[i]

    def derive(self, *tokens) -> "Rng":
        """Child stream keyed by (seed, tokens); independent of draws so far.

        Tokens may be ints or strings; strings are folded with FNV-1a. The
        child seed is mix64 applied after xoring each token word, so distinct
        token tuples give statistically independent streams.
        """
        s = np.array([self.seed], dtype=np.uint64)
        s = _mix64(s)
        for tok in tokens:
            word = _fnv1a(tok.encode()) if isinstance(tok, str) else int(tok) & _MASK64
            s = _mix64(s ^ np.uint64(word))
        return Rng(int(s[0]))
