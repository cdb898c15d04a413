"""Fixed-point numbers modulo N with exact addition and subtraction.

A ring with modulus ``N`` and ``m`` fractional bits holds the values
``j * 2**-m`` for ``0 <= j < N * 2**m``.  Elements are stored as integer
tick counts ``j`` so that addition and subtraction are bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

from .errors import ParameterError

# numpy int64 tick arrays must not overflow on a single addition
MAX_RING_BITS = 62


@dataclass(frozen=True)
class RingParams:
    modulus_N: int
    frac_bits_m: int

    def __post_init__(self):
        if not isinstance(self.modulus_N, (int, np.integer)) or self.modulus_N < 1:
            raise ParameterError(f"modulus_N must be a positive integer, got {self.modulus_N!r}")
        if not isinstance(self.frac_bits_m, (int, np.integer)) or self.frac_bits_m < 1:
            raise ParameterError(f"frac_bits_m must be a positive integer, got {self.frac_bits_m!r}")
        if (self.size - 1).bit_length() > MAX_RING_BITS:
            raise ParameterError("ring too large for 64-bit tick arithmetic")

    @property
    def scale(self) -> int:
        """Ticks per unit, ``2**m``."""
        return 1 << self.frac_bits_m

    @property
    def size(self) -> int:
        """Number of distinct ring elements, ``N * 2**m``."""
        return self.modulus_N << self.frac_bits_m

    @property
    def byte_width(self) -> int:
        """Bytes needed to serialize one tick count."""
        return max(1, ((self.size - 1).bit_length() + 7) // 8)

    def check_network(self, K: int) -> None:
        """Raise unless the ring can serve a network of ``K`` sensors."""
        if self.modulus_N <= K:
            raise ParameterError(f"modulus N={self.modulus_N} must exceed K={K}")

    def element(self, ticks: int) -> "RingElement":
        return RingElement(int(ticks) % self.size, self)

    def zero(self) -> "RingElement":
        return RingElement(0, self)

    def from_value(self, value) -> "RingElement":
        """Element whose real value is exactly ``value`` (must lie on the grid)."""
        ticks = Fraction(value) * self.scale
        if ticks.denominator != 1:
            raise ParameterError(f"{value!r} is not a multiple of 2^-{self.frac_bits_m}")
        return self.element(int(ticks))

    # -- vectorized helpers over indexed collections of ticks ------------
    def add(self, a, b):
        return (np.asarray(a, dtype=np.int64) + np.asarray(b, dtype=np.int64)) % self.size

    def sub(self, a, b):
        return (np.asarray(a, dtype=np.int64) - np.asarray(b, dtype=np.int64)) % self.size

    def neg(self, a):
        return (-np.asarray(a, dtype=np.int64)) % self.size

    def sum(self, a, axis=None):
        """Modular sum along ``axis``; exact because each partial sum is reduced."""
        arr = np.asarray(a, dtype=np.int64) % self.size
        if axis is None:
            arr = arr.ravel()
            axis = 0
        if arr.shape[axis] * (self.size - 1) < 2**63:
            return arr.sum(axis=axis) % self.size
        acc = np.zeros(np.delete(arr.shape, axis), dtype=np.int64)
        for part in np.moveaxis(arr, axis, 0):
            acc = (acc + part) % self.size
        return acc

    def uniform(self, rng: np.random.Generator, shape):
        return rng.integers(0, self.size, size=shape, dtype=np.int64)

    def to_value(self, ticks):
        return np.asarray(ticks, dtype=np.float64) / self.scale

    def encode(self, ticks: int) -> bytes:
        return int(ticks).to_bytes(self.byte_width, "little")

    def decode(self, data: bytes) -> int:
        if len(data) != self.byte_width:
            raise ParameterError(f"expected {self.byte_width} bytes, got {len(data)}")
        ticks = int.from_bytes(data, "little")
        if ticks >= self.size:
            raise ParameterError(f"tick count {ticks} outside ring of size {self.size}")
        return ticks


@dataclass(frozen=True)
class RingElement:
    ticks: int
    params: RingParams

    def __post_init__(self):
        if not 0 <= self.ticks < self.params.size:
            raise ParameterError(f"ticks {self.ticks} outside [0, {self.params.size})")

    @property
    def value(self) -> Fraction:
        return Fraction(self.ticks, self.params.scale)

    def __float__(self):
        return self.ticks / self.params.scale

    def __add__(self, other):
        return add_mod(self, other)

    def __sub__(self, other):
        return sub_mod(self, other)

    def __neg__(self):
        return RingElement((-self.ticks) % self.params.size, self.params)

    def to_bytes(self) -> bytes:
        return self.params.encode(self.ticks)

    @classmethod
    def from_bytes(cls, data: bytes, params: RingParams) -> "RingElement":
        return cls(params.decode(data), params)


def _same_params(a: RingElement, b: RingElement) -> RingParams:
    if not isinstance(a, RingElement) or not isinstance(b, RingElement):
        raise ParameterError("operands must be RingElement")
    if a.params != b.params:
        raise ParameterError(f"mismatched ring parameters {a.params} vs {b.params}")
    return a.params


def add_mod(a: RingElement, b: RingElement) -> RingElement:
    p = _same_params(a, b)
    return RingElement((a.ticks + b.ticks) % p.size, p)


def sub_mod(a: RingElement, b: RingElement) -> RingElement:
    p = _same_params(a, b)
    return RingElement((a.ticks - b.ticks) % p.size, p)


def sum_mod(collection: Iterable[RingElement]) -> RingElement:
    items: Sequence[RingElement] = list(collection)
    if not items:
        raise ParameterError("sum_mod needs at least one element")
    return reduce(add_mod, items)
