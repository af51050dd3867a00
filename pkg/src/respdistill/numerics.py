"""Dense float64 helpers and the seeded splitmix64 generator used everywhere.

Vectors and matrices are plain ``numpy.float64`` arrays; the functions here
only add the validation the rest of the package relies on.
"""

from __future__ import annotations

import zlib

import numpy as np

from .exceptions import DomainError

LOG_CLAMP = 1e-12

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB


def as_vec(v, name="vector"):
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError(f"{name} must be a non-empty 1-D array, got shape {arr.shape}")
    return arr


def check_finite(arr, name="array"):
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def softmax(v):
    """Row-wise softmax with max subtraction.

    Works along the last axis, so a single logit vector, a batch or a
    ``(teachers, samples, classes)`` stack are all accepted.
    """
    z = np.asarray(v, dtype=np.float64)
    if z.ndim < 1 or z.size == 0:
        raise DomainError(f"softmax expects a non-empty array, got shape {z.shape}")
    check_finite(z, "softmax input")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(target, pred):
    """-sum(target * log(pred)) with pred clamped at 1e-12.

    1-D inputs give a float; 2-D inputs give one loss per row.
    """
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape or t.ndim not in (1, 2) or t.size == 0:
        raise DomainError(f"cross_entropy shape mismatch: target {t.shape} vs pred {p.shape}")
    losses = -(t * np.log(np.maximum(p, LOG_CLAMP))).sum(axis=-1)
    if t.ndim == 1:
        return float(losses)
    return losses


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DomainError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DomainError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def _mix64(z):
    z = (z ^ (z >> 30)) * _MUL1 & _MASK64
    z = (z ^ (z >> 27)) * _MUL2 & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed, *keys):
    """Derive an independent 64-bit seed from ``seed`` and a path of keys.

    Keys may be ints or strings; strings are folded in via CRC-32 so the
    result is stable across Python versions (unlike ``hash``).
    """
    s = int(seed) & _MASK64
    for key in keys:
        if isinstance(key, str):
            key = zlib.crc32(key.encode("utf-8"))
        s = _mix64((s + _GAMMA * (int(key) + 1)) & _MASK64)
    return s


class Rng64:
    """splitmix64 stream.

    Output ``i`` (1-based) is ``mix(seed + i * gamma)``, so draws can be
    produced in vectorized blocks while staying identical to the scalar
    recurrence on every platform.
    """

    def __init__(self, seed=0):
        self.seed = int(seed) & _MASK64
        self.state = self.seed

    def __repr__(self):
        return f"Rng64(seed={self.seed}, state={self.state})"

    def next_u64(self, size=None):
        n = 1 if size is None else int(size)
        if n < 0:
            raise DomainError("size must be non-negative")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GAMMA) & _MASK64
        if size is None:
            return int(z[0])
        return z

    def random(self, size=None):
        """Uniform floats in [0, 1) with 53 bits of precision."""
        u = self.next_u64(1 if size is None else size)
        out = (u >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        if size is None:
            return float(out[0])
        return out

    def uniform_index(self, n, size=None):
        """Unbiased draws from ``range(n)`` by rejecting the short final bucket."""
        n = int(n)
        if n < 1:
            raise DomainError("uniform_index needs n >= 1")
        count = 1 if size is None else int(size)
        limit = (1 << 64) - ((1 << 64) % n)
        out = np.empty(count, dtype=np.int64)
        filled = 0
        while filled < count:
            u = self.next_u64(count - filled)
            if limit < (1 << 64):
                u = u[u < np.uint64(limit)]
            take = u % np.uint64(n)
            out[filled : filled + take.size] = take.astype(np.int64)
            filled += take.size
        if size is None:
            return int(out[0])
        return out

    def normal(self, size=None):
        """Standard normal draws via Box-Muller (two uniforms per pair)."""
        count = 1 if size is None else int(np.prod(size))
        pairs = (count + 1) // 2
        u = self.random(2 * pairs)
        u1 = 1.0 - u[:pairs]  # (0, 1], keeps log finite
        u2 = u[pairs:]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:count]
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def permutation(self, n):
        keys = self.next_u64(int(n))
        return np.argsort(keys, kind="stable")

    def spawn(self, *keys):
        return Rng64(derive_seed(self.seed, *keys))


def rng_uniform_index(rng, n):
    return rng.uniform_index(n)
