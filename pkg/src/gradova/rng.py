"""Seeded random streams shared by every component.

The generator is xoshiro256++ seeded through splitmix64, so a dataset or a
weight initialization can be regenerated bit-for-bit from its integer seed in
any language:

* seeding: ``z = seed``; four times ``z += 0x9E3779B97F4A7C15`` and
  ``x = z; x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EB; x ^= x >> 31`` gives state words
  ``s0..s3`` (all arithmetic mod 2**64).
* output: ``rotl(s0 + s3, 23) + s0`` followed by the standard xoshiro256
  state transition.
* uniform double in [0, 1): ``(x >> 11) * 2**-53``.
* normal: Box-Muller on two consecutive uniforms ``u1, u2``:
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`` (the sine branch is discarded).
* shuffle: Fisher-Yates from the last index down, swap partner
  ``j = ((x >> 32) * (i + 1)) >> 32``.

The scalar loops run in a compiled extension when it is importable and in
pure Python otherwise (``GRADOVA_PURE=1`` forces the fallback). Both produce
identical streams.
"""

from __future__ import annotations

import os

import numpy as np

from gradova import _fallback

try:
    if os.environ.get("GRADOVA_PURE"):
        raise ImportError("pure-Python backend forced")
    from gradova import _kernels as _backend

    BACKEND = "compiled"
except ImportError:
    _backend = _fallback
    BACKEND = "python"

MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64_state(seed: int) -> list[int]:
    z = int(seed) & MASK64
    words = []
    for _ in range(4):
        z = (z + 0x9E3779B97F4A7C15) & MASK64
        x = z
        x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
        words.append(x ^ (x >> 31))
    return words


class Xoshiro256pp:
    """xoshiro256++ generator with numpy-returning convenience draws."""

    def __init__(self, seed: int, backend=None):
        self.seed = int(seed)
        self._state = np.array(splitmix64_state(seed), dtype=np.uint64)
        self._backend = backend if backend is not None else _backend

    @property
    def state(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self._state)

    def next_uint64(self, n: int) -> np.ndarray:
        out = np.empty(int(n), dtype=np.uint64)
        if n:
            self._backend.fill_uint64(self._state, out)
        return out

    def uniform(self, shape=()) -> np.ndarray | float:
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_uint64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(u[0]) if shape == () else u.reshape(shape)

    def uniform_range(self, low: float, high: float, shape) -> np.ndarray:
        return low + (high - low) * self.uniform(shape)

    def normal(self, shape=()) -> np.ndarray | float:
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_uint64(2 * n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u1, u2 = u[0::2], u[1::2]
        z = np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(2.0 * np.pi * u2)
        return float(z[0]) if shape == () else z.reshape(shape)

    def shuffle(self, items: np.ndarray) -> None:
        """Shuffle a 1-D int64 array in place."""
        if items.dtype != np.int64 or not items.flags.c_contiguous:
            raise TypeError("shuffle expects a contiguous int64 array")
        if len(items) > 1:
            self._backend.shuffle_inplace(self._state, items)

    def permutation(self, n: int) -> np.ndarray:
        perm = np.arange(int(n), dtype=np.int64)
        self.shuffle(perm)
        return perm


def derive_seed(root: int, offset: int) -> int:
    """Child seed for a component; offsets are listed in ``gradova.config``."""
    return (int(root) + int(offset)) & MASK64
