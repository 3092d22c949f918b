"""Deterministic, platform-independent random streams and parameter initializers.

The generator is SplitMix64: output ``i`` of a stream with key ``key`` is
``fin(key + i * GAMMA) mod 2**64`` where ``fin`` is the standard three-step
xor-shift/multiply finalizer and ``GAMMA = 0x9E3779B97F4A7C15``.  Being
counter-based, it produces bit-identical sequences on every platform and
vectorizes cleanly.  Normal variates come from Box-Muller, so every
distribution is a fixed function of the raw 64-bit outputs.

Streams for different purposes are derived from one experiment seed by
folding integer tags into the key (see :func:`derive`).  Weights use tag 0
and scores tag 1; the remaining tags below are simulator plumbing.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15

# Stream purposes, folded into the key after the seed.
TAG_WEIGHTS = 0
TAG_SCORES = 1
TAG_SAMPLING = 2
TAG_TRAIN = 3
TAG_DATA = 4
TAG_PARTITION = 5
TAG_SPLIT = 6


def _fin(z: int) -> int:
    """SplitMix64 finalizer on a Python int, mod 2**64."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def _fin_array(z: np.ndarray) -> np.ndarray:
    """Vectorized :func:`_fin` on a uint64 array."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def _fold(key: int, tag: int) -> int:
    return _fin(key ^ _fin(tag + _GAMMA))


class RngStream:
    """Single-owner deterministic stream of 64-bit words.

    Two streams built from the same key produce identical sequences.  Safe
    to move between threads, not to share concurrently.
    """

    algorithm_id = "splitmix64"

    def __init__(self, key: int):
        self._key = key & _MASK
        self._counter = 0

    @property
    def key(self) -> int:
        return self._key

    def next_u64(self, n: int) -> np.ndarray:
        """Return the next ``n`` raw 64-bit outputs as a uint64 array."""
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            states = np.uint64(self._key) + np.uint64(_GAMMA) * idx
        return _fin_array(states)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """``n`` float64 samples uniform on [low, high)."""
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return low + (high - low) * u

    def normal(self, n: int) -> np.ndarray:
        """``n`` standard-normal float64 samples via Box-Muller."""
        pairs = (n + 1) // 2
        # u1 in (0, 1] so the log is finite; u2 in [0, 1).
        u1 = ((self.next_u64(pairs) >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (self.next_u64(pairs) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def integers_below(self, bound: int, n: int = 1) -> np.ndarray:
        """``n`` exactly-uniform integers in [0, bound) via rejection."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        rem = (1 << 64) % bound
        if rem == 0:  # power-of-two bound: plain modulo is already uniform
            return (self.next_u64(n) % np.uint64(bound)).astype(np.int64)
        # Accept raw words below the largest multiple of bound.
        limit = np.uint64((1 << 64) - rem)
        out = np.empty(n, dtype=np.int64)
        filled = 0
        while filled < n:
            raw = self.next_u64(max(n - filled, 8))
            good = raw[raw < limit]
            take = min(len(good), n - filled)
            out[filled : filled + take] = (good[:take] % np.uint64(bound)).astype(np.int64)
            filled += take
        return out

    def shuffle(self, items: np.ndarray) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = int(self.integers_below(i + 1, 1)[0])
            items[i], items[j] = items[j], items[i]

    def sample_without_replacement(self, n_total: int, k: int) -> np.ndarray:
        """``k`` distinct integers from [0, n_total), uniform, order random."""
        if not 0 <= k <= n_total:
            raise ValueError(f"cannot sample {k} from {n_total}")
        arr = np.arange(n_total, dtype=np.int64)
        for i in range(k):
            j = i + int(self.integers_below(n_total - i, 1)[0])
            arr[i], arr[j] = arr[j], arr[i]
        return arr[:k].copy()

    def child(self, *tags: int) -> "RngStream":
        """Derive an independent stream; a pure function of (key, tags)."""
        key = self._key
        for tag in tags:
            key = _fold(key, tag)
        return RngStream(key)


def derive(seed: int, tags: list[int] | tuple[int, ...]) -> RngStream:
    """Build a stream whose sequence depends only on (seed, tags).

    Distinct tag lists give statistically independent streams.  The
    protocol seed is 32 bits on the wire; it is zero-extended here.
    """
    key = _fin(seed)
    for tag in tags:
        key = _fold(key, tag)
    return RngStream(key)


class InitKind(str, Enum):
    """Parameter initializer families for the fixed random network."""

    GLOROT_NORMAL = "glorot_normal"
    KAIMING_NORMAL = "kaiming_normal"
    SIGNED_KAIMING_CONSTANT = "signed_kaiming_constant"
    KAIMING_UNIFORM = "kaiming_uniform"


def init_weights(shape: tuple[int, int], kind: InitKind, rng: RngStream) -> np.ndarray:
    """Fill a (fan_out, fan_in) float32 matrix per the chosen initializer.

    - glorot_normal: Normal(0, sqrt(2 / (fan_in + fan_out)))
    - kaiming_normal: Normal(0, sqrt(2 / fan_in))
    - signed_kaiming_constant: uniform over {-s, +s}, s = sqrt(2 / fan_in)
    - kaiming_uniform: Uniform(-b, b), b = sqrt(6 / fan_in)
    """
    fan_out, fan_in = shape
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fan_in and fan_out must be >= 1, got {shape}")
    n = fan_out * fan_in
    kind = InitKind(kind)
    if kind is InitKind.GLOROT_NORMAL:
        vals = rng.normal(n) * math.sqrt(2.0 / (fan_in + fan_out))
    elif kind is InitKind.KAIMING_NORMAL:
        vals = rng.normal(n) * math.sqrt(2.0 / fan_in)
    elif kind is InitKind.SIGNED_KAIMING_CONSTANT:
        sigma = math.sqrt(2.0 / fan_in)
        bits = rng.next_u64(n) & np.uint64(1)
        vals = np.where(bits == 1, sigma, -sigma)
    elif kind is InitKind.KAIMING_UNIFORM:
        b = math.sqrt(6.0 / fan_in)
        vals = rng.uniform(n, -b, b)
    else:  # pragma: no cover - enum is exhaustive
        raise ValueError(f"unknown init kind {kind}")
    return vals.astype(np.float32).reshape(fan_out, fan_in)


def init_scores(shape: tuple[int, int], rng: RngStream) -> np.ndarray:
    """Score initializer: Kaiming-uniform, on its own tagged stream."""
    return init_weights(shape, InitKind.KAIMING_UNIFORM, rng)
