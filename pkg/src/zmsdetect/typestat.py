"""Empirical types, quantized square-root types and the Hellinger diameter."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Protocol, Sequence

import numpy as np

from . import kernels
from .errors import InputError, ParameterError
from .ring import RingElement, RingParams


@dataclass(frozen=True)
class Alphabet:
    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ParameterError(f"alphabet size must be positive, got {self.size}")


@dataclass(frozen=True)
class EmpiricalType:
    counts: tuple

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise InputError("negative symbol count")
        if sum(self.counts) < 1:
            raise InputError("type of an empty sequence is undefined")

    @property
    def length_t(self) -> int:
        return int(sum(self.counts))

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(len(self.counts))

    @property
    def probabilities(self) -> tuple:
        t = self.length_t
        return tuple(Fraction(int(c), t) for c in self.counts)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.float64) / self.length_t

    def to_row(self) -> list:
        """``[t, c_0, ..., c_{|X|-1}]`` as written to CSV and debug logs."""
        return [self.length_t, *map(int, self.counts)]

    @classmethod
    def from_row(cls, row) -> "EmpiricalType":
        t, *counts = (int(v) for v in row)
        et = cls(tuple(counts))
        if et.length_t != t:
            raise InputError(f"row declares t={t} but counts sum to {et.length_t}")
        return et


@dataclass(frozen=True)
class QuantizedSqrtType:
    """Per-symbol ``sqrt`` of a type, rounded onto the ring grid."""

    ticks: tuple
    params: RingParams
    source_t: int

    @property
    def values(self) -> tuple:
        return tuple(RingElement(int(v), self.params) for v in self.ticks)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.ticks, dtype=np.int64)

    def real_values(self) -> np.ndarray:
        return self.as_array() / self.params.scale


def compute_type(sequence, alphabet: Alphabet) -> EmpiricalType:
    seq = np.asarray(sequence)
    if seq.ndim != 1 or seq.size == 0:
        raise InputError("sequence must be a non-empty 1-d array of symbols")
    if not np.issubdtype(seq.dtype, np.integer):
        raise InputError("symbols must be integers")
    if seq.min() < 0 or seq.max() >= alphabet.size:
        raise InputError(f"symbol outside alphabet of size {alphabet.size}")
    return EmpiricalType(tuple(int(c) for c in np.bincount(seq, minlength=alphabet.size)))


def quantize_sqrt(etype: EmpiricalType, ring: RingParams) -> QuantizedSqrtType:
    """Nearest grid point to sqrt of each probability, ties rounded up.

    A probability of exactly one would round to ``1``; it is clamped to
    ``1 - 2**-m`` so every value stays strictly below one.
    """
    ticks = kernels.sqrt_ticks(np.asarray(etype.counts, dtype=np.int64), etype.length_t,
                               ring.frac_bits_m)
    return QuantizedSqrtType(tuple(int(v) for v in ticks), ring, etype.length_t)


class DiameterMeasure(Protocol):
    """Continuous map of K marginals, zero exactly when they coincide."""

    def __call__(self, marginals) -> float: ...


def _as_marginals(marginals) -> np.ndarray:
    arr = np.asarray(marginals, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError("marginals must have shape (K, |X|)")
    if np.any(arr < -1e-12) or np.any(np.abs(arr.sum(axis=1) - 1) > 1e-9):
        raise InputError("each marginal must be a probability vector")
    return np.clip(arr, 0.0, None)


def hellinger_diameter(marginals) -> float:
    """``K^2 - sum_x (sum_k sqrt p_k(x))^2`` for a (K, |X|) array."""
    p = _as_marginals(marginals)
    if p.shape[0] < 2:
        raise ParameterError("the diameter needs at least two marginals")
    K = p.shape[0]
    col = np.sqrt(p).sum(axis=0)
    return max(0.0, float(K * K - col @ col))


def hellinger_sq(p, q) -> float:
    """Squared Hellinger distance ``1/2 sum (sqrt p - sqrt q)^2``."""
    diff = np.sqrt(np.asarray(p, dtype=np.float64)) - np.sqrt(np.asarray(q, dtype=np.float64))
    return 0.5 * float(diff @ diff)


def pairwise_hellinger_sum(marginals) -> float:
    """Sum over ordered pairs (k, l) of squared Hellinger distances."""
    p = _as_marginals(marginals)
    return sum(hellinger_sq(p[k], p[l]) for k in range(len(p)) for l in range(len(p)))


def diameter_max(K: int, alphabet_size: int) -> int:
    if K < 2 or alphabet_size < 2:
        raise ParameterError("d_max needs K >= 2 and |X| >= 2")
    X = alphabet_size
    return K * (K - 1) - (K // X) * (K - X + K % X)


def marginals_of(joint) -> np.ndarray:
    """(K, |X|) marginals of a joint pmf given as a K-dimensional array."""
    p = np.asarray(joint, dtype=np.float64)
    K = p.ndim
    return np.stack([p.sum(axis=tuple(a for a in range(K) if a != k)) for k in range(K)])


def quantized_statistic(types: Sequence[QuantizedSqrtType]) -> Fraction:
    """Exact ``K^2 - sum_x (sum_k q_k(x))^2`` over real (not modular) sums."""
    if len(types) < 2:
        raise ParameterError("need at least two quantized types")
    params = types[0].params
    scale = params.scale
    ticks = np.array([q.as_array() for q in types], dtype=np.int64)
    col = ticks.sum(axis=0)
    K = len(types)
    return Fraction(K * K * scale * scale - int((col * col).sum()), scale * scale)
