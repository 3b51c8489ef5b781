"""Dense float64 primitives and the package-wide random number generator.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 stored C-contiguous
(row-major), which maps one-to-one onto the flat ``dims + data`` layout used by
the checkpoint format.

The generator is xoshiro256** seeded through splitmix64, so a given seed gives
the same stream on every platform and in any language that implements the two
published algorithms.  Bulk draws run through small numba kernels.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .errors import UsageError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def as_tensor(values, ndim: int | None = None) -> np.ndarray:
    """Return ``values`` as a C-contiguous float64 array, optionally checking rank."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise UsageError(f"expected a {ndim}-d tensor, got shape {arr.shape}")
    return arr


def logsumexp(values) -> float:
    """Stable ``log(sum(exp(values)))``; ``-inf`` entries are the log-domain zero."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise UsageError("logsumexp of an empty list")
    if np.any(np.isnan(v)) or np.any(v == np.inf):
        raise UsageError("logsumexp inputs must lie in [-inf, +inf)")
    m = v.max()
    if m == -np.inf:
        return -math.inf
    return float(m + np.log(np.sum(np.exp(v - m))))


def softmax(u) -> np.ndarray:
    """Softmax over the last axis, max-shifted."""
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise UsageError("softmax input must be finite")
    e = np.exp(u - u.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise UsageError("log_softmax input must be finite")
    s = u - u.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def affine(W, x, b) -> np.ndarray:
    """``W @ x + b`` with dimension checks."""
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise UsageError("affine expects a matrix, a vector and a vector")
    if W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise UsageError(f"affine dimension mismatch: W{W.shape}, x{x.shape}, b{b.shape}")
    return W @ x + b


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --------------------------------------------------------------------------
# splitmix64 / xoshiro256**


def splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step: returns ``(new_state, output)``."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, z ^ (z >> 31)


_U1 = np.uint64(1)
_U11 = np.uint64(11)
_U17 = np.uint64(17)
_U45 = np.uint64(45)
_U5 = np.uint64(5)
_U7 = np.uint64(7)
_U9 = np.uint64(9)
_U64 = np.uint64(64)
_INV53 = 1.0 / 9007199254740992.0


@numba.njit(cache=True)
def _rotl(x, k):
    return (x << k) | (x >> (_U64 - k))


@numba.njit(cache=True)
def _next(s):
    result = _rotl(s[1] * _U5, _U7) * _U9
    t = s[1] << _U17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], _U45)
    return result


@numba.njit(cache=True)
def _fill_u64(s, out):
    for i in range(out.shape[0]):
        out[i] = _next(s)


@numba.njit(cache=True)
def _fill_unit(s, out):
    for i in range(out.shape[0]):
        out[i] = np.float64(_next(s) >> _U11) * _INV53


@numba.njit(cache=True)
def _below(s, n):
    # Unbiased draw in [0, n) by rejecting the short top bucket.
    n64 = np.uint64(n)
    limit = np.uint64(0xFFFFFFFFFFFFFFFF) - (np.uint64(0xFFFFFFFFFFFFFFFF) % n64 + _U1) % n64
    while True:
        r = _next(s)
        if r <= limit:
            return np.int64(r % n64)


@numba.njit(cache=True)
def _fill_below(s, n, out):
    for i in range(out.shape[0]):
        out[i] = _below(s, n)


@numba.njit(cache=True)
def _shuffle(s, arr):
    for i in range(arr.shape[0] - 1, 0, -1):
        j = _below(s, i + 1)
        tmp = arr[i]
        arr[i] = arr[j]
        arr[j] = tmp


class Rng:
    """xoshiro256** generator whose 256-bit state is filled by splitmix64(seed).

    Doubles are ``(next >> 11) * 2**-53``; bounded integers reject the
    incomplete top bucket of the 64-bit range then reduce modulo ``n``.
    """

    def __init__(self, seed: int):
        x = int(seed) & _MASK64
        words = []
        for _ in range(4):
            x, out = splitmix64(x)
            words.append(out)
        self.seed = int(seed) & _MASK64
        self._s = np.array(words, dtype=np.uint64)

    @classmethod
    def for_stream(cls, seed: int, stream: int) -> "Rng":
        """Independent generator for sub-stream ``stream`` of ``seed``.

        The derived seed is ``splitmix64_out(splitmix64_out(seed) ^ stream)``, so
        per-sample streams do not depend on the order samples are produced in.
        """
        _, base = splitmix64(int(seed) & _MASK64)
        _, derived = splitmix64(base ^ (int(stream) & _MASK64))
        return cls(derived)

    @property
    def state(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self._s)

    def next_u64(self) -> int:
        out = np.empty(1, dtype=np.uint64)
        _fill_u64(self._s, out)
        return int(out[0])

    def u64(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.uint64)
        _fill_u64(self._s, out)
        return out

    def random(self, size=None):
        """Uniform doubles in [0, 1); a Python float when ``size`` is None."""
        n = 1 if size is None else int(np.prod(size))
        out = np.empty(n, dtype=np.float64)
        _fill_unit(self._s, out)
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def uniform(self, low: float, high: float, size=None):
        u = self.random(size)
        return low + (high - low) * u

    def integers(self, low: int, high: int, size=None):
        """Integers in ``[low, high)``."""
        n = high - low
        if n <= 0:
            raise UsageError(f"empty integer range [{low}, {high})")
        count = 1 if size is None else int(np.prod(size))
        out = np.empty(count, dtype=np.int64)
        _fill_below(self._s, n, out)
        out += low
        if size is None:
            return int(out[0])
        return out.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of ``range(n)``."""
        arr = np.arange(n, dtype=np.int64)
        if n > 1:
            _shuffle(self._s, arr)
        return arr
