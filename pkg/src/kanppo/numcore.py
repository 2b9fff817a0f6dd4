"""Dense arithmetic helpers and the package's deterministic random number generator.

Matrices are plain ``numpy.float64`` arrays in C (row-major) order.  The
generator is SplitMix64 (Steele, Lea & Flood 2014), implemented here so that
a seed produces the same stream on every platform and numpy version.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["Rng", "as_matrix", "matmul", "sample_gaussian"]

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / (1 << 53)


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Build a 2-D float64 matrix, optionally from flat row-major data."""
    m = np.array(data, dtype=np.float64, order="C")
    if rows is not None or cols is not None:
        if rows is None or cols is None:
            raise ValueError("rows and cols must be given together")
        if m.size != rows * cols:
            raise ValueError(f"data has {m.size} values, expected {rows}x{cols}={rows * cols}")
        m = m.reshape(rows, cols)
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul dimension mismatch: left is {a.shape[0]}x{a.shape[1]}, "
            f"right is {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MUL1) & _MASK
    z = ((z ^ (z >> 27)) * _MUL2) & _MASK
    return z ^ (z >> 31)


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


class Rng:
    """SplitMix64 stream.

    The state is a 64-bit counter advanced by the golden-ratio increment; each
    output is a bijective mix of the counter.  Because outputs depend only on
    the counter, blocks of draws are generated vectorised with numpy's
    wrapping ``uint64`` arithmetic and match the scalar path bit for bit.

    ``split(tag)`` derives a child stream from the original seed and a 64-bit
    FNV-1a hash of ``tag``; it does not depend on how much of the parent stream
    has been consumed.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self.state = self.seed

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed:#x}, state={self.state:#x})"

    def split(self, tag: str) -> "Rng":
        return Rng(_mix64((self.seed ^ _mix64(_fnv1a64(tag))) & _MASK))

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        return _mix64(self.state)

    def u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw outputs as a uint64 array."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GAMMA) & _MASK
        return z

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        """Uniform draws on ``[low, high)`` with 53-bit resolution."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None, mean: float = 0.0, std: float = 1.0):
        """Gaussian draws by the Box-Muller transform.

        Each pair of raw outputs ``(k1, k2)`` yields ``u1 = (k1>>11 + 1)/2^53``
        in ``(0, 1]`` and ``u2 = (k2>>11)/2^53``; both ``sqrt(-2 ln u1) cos(2 pi u2)``
        and the matching sine are used, in that order.
        """
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        raw = (self.u64(2 * pairs) >> np.uint64(11)).astype(np.float64)
        u1 = (raw[0::2] + 1.0) * _INV_2_53
        u2 = raw[1::2] * _INV_2_53
        radius = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(_TWO_PI * u2)
        z[1::2] = radius * np.sin(_TWO_PI * u2)
        z = mean + std * z[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        # raw outputs are distinct with overwhelming probability; stable sort breaks ties
        return np.argsort(self.u64(n), kind="stable")


def sample_gaussian(rng: Rng, mean: float, std: float) -> float:
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    return rng.normal(mean=mean, std=std)
