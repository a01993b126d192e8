"""Rank-4 tensor plumbing, label maps, binary dumps, and a deterministic RNG.

Feature maps are plain float64 numpy arrays in (batch, channel, row, column)
order, C-contiguous, so their flat layout matches the on-disk dump format
byte for byte. All numeric code in this package runs in double precision;
the finite-difference checks depend on it.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ShapeError",
    "ConfigError",
    "Rng",
    "LabelMap",
    "as_tensor4",
    "nchw_index",
    "read_labels",
    "read_tensor",
    "write_labels",
    "write_tensor",
]

_MASK64 = (1 << 64) - 1


class ShapeError(ValueError):
    """Raised when tensor shapes do not satisfy an operation's contract."""


class ConfigError(ValueError):
    """Raised for invalid run configuration, naming the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


def as_tensor4(a) -> np.ndarray:
    """Validate and return `a` as a C-contiguous float64 (n, c, h, w) array."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeError(f"expected a rank-4 tensor, got shape {arr.shape}")
    if any(d < 1 for d in arr.shape):
        raise ShapeError(f"all dims must be >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


def nchw_index(n_i: int, c_i: int, h_i: int, w_i: int, shape) -> int:
    """Flat row-major offset of element (n_i, c_i, h_i, w_i) in `shape`."""
    n, c, h, w = shape
    for name, i, bound in (("n", n_i, n), ("c", c_i, c), ("h", h_i, h), ("w", w_i, w)):
        if not 0 <= i < bound:
            raise IndexError(f"index {name}={i} out of bounds for dim of size {bound}")
    return ((n_i * c + c_i) * h + h_i) * w + w_i


@dataclass
class LabelMap:
    """Integer class assignments per pixel with a reserved ignore value."""

    labels: np.ndarray  # (n, h, w) integer array
    num_classes: int
    ignore_value: int = -1

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 3:
            raise ShapeError(f"labels must be (n, h, w), got shape {self.labels.shape}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if 0 <= self.ignore_value < self.num_classes:
            raise ValueError("ignore_value must lie outside [0, num_classes)")
        bad = (self.labels != self.ignore_value) & (
            (self.labels < 0) | (self.labels >= self.num_classes)
        )
        if bad.any():
            raise ValueError("labels must be ignore_value or in [0, num_classes)")

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def h(self) -> int:
        return self.labels.shape[1]

    @property
    def w(self) -> int:
        return self.labels.shape[2]

    @property
    def valid(self) -> np.ndarray:
        """Boolean (n, h, w) mask, False where the label is ignored."""
        return self.labels != self.ignore_value


class Rng:
    """SplitMix64 stream with uniform and Box-Muller Gaussian draws.

    Pure 64-bit integer arithmetic, so sequences are bit-identical across
    platforms for a given seed. Single-owner: not safe to share between
    concurrent tasks.
    """

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Next float in [0, 1): the high 53 bits of one u64 over 2^53."""
        return (self.next_u64() >> 11) * 2.0**-53

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        """Gaussian draw via Box-Muller; consumes two uniforms per call."""
        u1 = self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log1p(-u1))
        return mean + std * (r * math.cos(2.0 * math.pi * u2))

    def uniforms(self, shape) -> np.ndarray:
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        for i in range(out.size):
            out[i] = self.uniform()
        return out.reshape(shape)

    def normals(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        for i in range(out.size):
            out[i] = self.normal(mean, std)
        return out.reshape(shape)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi); rejection-free via 53-bit floats."""
        if hi <= lo:
            raise ValueError(f"empty range [{lo}, {hi})")
        return lo + int(self.uniform() * (hi - lo))

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle driven by this stream."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i + 1)
            items[i], items[j] = items[j], items[i]


def mix_seed(seed: int, index: int) -> int:
    """Derive an independent stream seed from (seed, index), order-free."""
    r = Rng(seed & _MASK64)
    base = r.next_u64()
    r2 = Rng((base ^ (index & _MASK64)) & _MASK64)
    return r2.next_u64()


# Binary dump: 16-byte header of four little-endian u32 dims (n, c, h, w),
# then n*c*h*w little-endian payload values in row-major order.

_HEADER = struct.Struct("<4I")


def write_tensor(path, u: np.ndarray) -> None:
    u = as_tensor4(u)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*u.shape))
        fh.write(u.astype("<f8", copy=False).tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise IOError(f"{path}: truncated header")
        n, c, h, w = _HEADER.unpack(raw)
        count = n * c * h * w
        payload = fh.read(8 * count)
        if len(payload) != 8 * count:
            raise IOError(f"{path}: truncated payload, wanted {count} float64s")
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return data.reshape(n, c, h, w)


def write_labels(path, lm: LabelMap) -> None:
    """Dump a label map with the tensor header convention and int32 payload."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(lm.n, 1, lm.h, lm.w))
        fh.write(lm.labels.astype("<i4").tobytes(order="C"))


def read_labels(path, num_classes: int, ignore_value: int = -1) -> LabelMap:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise IOError(f"{path}: truncated header")
        n, c, h, w = _HEADER.unpack(raw)
        if c != 1:
            raise IOError(f"{path}: label dump must have c=1, got {c}")
        count = n * h * w
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise IOError(f"{path}: truncated payload, wanted {count} int32s")
    labels = np.frombuffer(payload, dtype="<i4").astype(np.int64).reshape(n, h, w)
    return LabelMap(labels, num_classes=num_classes, ignore_value=ignore_value)
