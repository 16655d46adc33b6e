"""Deterministic random number generation.

Every random choice in this package (noise draws, weight init, shuffles,
degradation placement) flows through :class:`Rng`, which implements a fixed
algorithm so that a given seed yields the same stream everywhere:

* state: xoshiro256** with the 4x64-bit state expanded from the seed by
  SplitMix64,
* uniforms: the top 53 bits of each output word, ``(x >> 11) * 2**-53``,
  giving doubles in [0, 1),
* normals: Box-Muller, ``r = sqrt(-2 ln(1 - u1))``, ``theta = 2 pi u2``,
  yielding the pair ``(r cos theta, r sin theta)``. Odd-sized requests cache
  the spare half-pair, so the stream position depends only on the total
  number of values drawn, not on how the requests were sliced up.

The bulk generator loop is JIT-compiled with numba when available; the pure
Python fallback produces bit-identical words (covered by a test).
"""

import math

import numpy as np

from .errors import ValidationError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the fallback test
    _HAVE_NUMBA = False


def _splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step. Returns (output, next_state)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


def _fill_u64_py(state: np.ndarray, out: np.ndarray) -> None:
    """xoshiro256** bulk fill, reference implementation."""
    s0, s1, s2, s3 = (int(v) for v in state)
    for i in range(out.shape[0]):
        x = (s1 * 5) & _MASK64
        x = ((x << 7) | (x >> 57)) & _MASK64
        out[i] = (x * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _fill_u64_jit(state, out):  # pragma: no cover - compiled
        s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
        five = np.uint64(5)
        nine = np.uint64(9)
        for i in range(out.shape[0]):
            x = s1 * five
            x = (x << np.uint64(7)) | (x >> np.uint64(57))
            out[i] = x * nine
            t = s1 << np.uint64(17)
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = (s3 << np.uint64(45)) | (s3 >> np.uint64(19))
        state[0], state[1], state[2], state[3] = s0, s1, s2, s3

    _fill_u64 = _fill_u64_jit
else:
    _fill_u64 = _fill_u64_py


class Rng:
    """Seeded deterministic generator; see the module docstring for recipes."""

    def __init__(self, seed: int):
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ValidationError(f"seed must be an integer, got {type(seed).__name__}")
        if not 0 <= seed < 2**64:
            raise ValidationError(f"seed must lie in [0, 2**64), got {seed}")
        self.seed = seed
        state = np.empty(4, dtype=np.uint64)
        s = seed
        for i in range(4):
            value, s = _splitmix64(s)
            state[i] = value
        self._state = state
        self._spare: float | None = None

    def u64(self, n: int) -> np.ndarray:
        """Next n raw 64-bit words as a uint64 array."""
        if n < 0:
            raise ValidationError(f"draw count must be >= 0, got {n}")
        out = np.empty(n, dtype=np.uint64)
        if n:
            _fill_u64(self._state, out)
        return out

    def uniforms(self, n: int) -> np.ndarray:
        """Next n doubles uniform on [0, 1)."""
        return (self.u64(n) >> np.uint64(11)) * np.float64(2.0**-53)

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        """One double uniform on [low, high)."""
        return low + (high - low) * float(self.uniforms(1)[0])

    def normals(self, n: int) -> np.ndarray:
        """Next n standard normal doubles (Box-Muller, spare cached)."""
        if n < 0:
            raise ValidationError(f"draw count must be >= 0, got {n}")
        out = np.empty(n, dtype=np.float64)
        have = 0
        if self._spare is not None and n > 0:
            out[0] = self._spare
            self._spare = None
            have = 1
        remaining = n - have
        if remaining > 0:
            pairs = (remaining + 1) // 2
            u = self.uniforms(2 * pairs)
            r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
            theta = (2.0 * math.pi) * u[1::2]
            z = np.empty(2 * pairs, dtype=np.float64)
            z[0::2] = r * np.cos(theta)
            z[1::2] = r * np.sin(theta)
            out[have:] = z[:remaining]
            if remaining & 1:
                self._spare = float(z[remaining])
        return out

    def normal(self) -> float:
        return float(self.normals(1)[0])

    def integers(self, n: int, bound: int) -> np.ndarray:
        """Next n integers uniform on [0, bound).

        Uses u64 % bound; the modulo bias is below bound * 2**-64, negligible
        for the array-index bounds used here.
        """
        if bound <= 0:
            raise ValidationError(f"bound must be positive, got {bound}")
        return (self.u64(n) % np.uint64(bound)).astype(np.int64)

    def integer(self, bound: int) -> int:
        return int(self.integers(1, bound)[0])

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n), one swap per raw word."""
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.integer(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def spawn(self, index: int) -> "Rng":
        """Child generator for worker `index`, derived from this seed."""
        if index < 0:
            raise ValidationError(f"spawn index must be >= 0, got {index}")
        child_seed, _ = _splitmix64((self.seed + (index + 1) * _GOLDEN) & _MASK64)
        return Rng(child_seed)
