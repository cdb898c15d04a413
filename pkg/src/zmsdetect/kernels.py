"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is picked once at import time from ``ZMSDETECT_BACKEND``
(``numba`` or ``numpy``); numba is used when it is importable and the
variable is unset.  Both implementations are importable directly as
``numpy_impl`` and ``numba_impl`` so they can be compared in tests and
benchmarks.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

__all__ = [
    "BACKEND",
    "kl_min_over_candidates",
    "quantized_sum_squares",
    "sqrt_ticks",
    "numpy_impl",
    "numba_impl",
]


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _np_sqrt_ticks(counts, t, m):
    """Exact round-half-up of 2^m * sqrt(counts / t), clamped below 2^m."""
    c = np.asarray(counts, dtype=np.int64)
    a = (c << (2 * m + 2)) // np.int64(t)
    s = np.floor(np.sqrt(a.astype(np.float64))).astype(np.int64)
    s -= (s * s > a).astype(np.int64)
    s += ((s + 1) * (s + 1) <= a).astype(np.int64)
    ticks = (s + 1) >> 1
    return np.minimum(ticks, (1 << m) - 1)


def _np_quantized_sum_squares(counts, t, m):
    ticks = _np_sqrt_ticks(counts, t, m)
    col = ticks.sum(axis=-2)
    return (col * col).sum(axis=-1)


def _np_kl_min(q1, q2, lr1, l1r1, lr2, l1r2, chunk=256):
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    out = np.empty(q1.shape[0])
    neg_h = _np_neg_entropy(q1) + _np_neg_entropy(q2)
    for lo in range(0, q1.shape[0], chunk):
        a1 = q1[lo:lo + chunk, None]
        a2 = q2[lo:lo + chunk, None]
        with np.errstate(invalid="ignore"):
            cross = (np.where(a1 > 0, a1 * lr1, 0.0)
                     + np.where(a1 < 1, (1 - a1) * l1r1, 0.0)
                     + np.where(a2 > 0, a2 * lr2, 0.0)
                     + np.where(a2 < 1, (1 - a2) * l1r2, 0.0))
        out[lo:lo + chunk] = neg_h[lo:lo + chunk] - cross.max(axis=1)
    return out


def _np_neg_entropy(q):
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(q > 0, q * np.log2(q), 0.0)
        b = np.where(q < 1, (1 - q) * np.log2(1 - q), 0.0)
    return a + b


numpy_impl = SimpleNamespace(
    sqrt_ticks=_np_sqrt_ticks,
    quantized_sum_squares=_np_quantized_sum_squares,
    kl_min_over_candidates=_np_kl_min,
)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

numba_impl = None
try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dependency
    njit = None

if njit is not None:

    @njit(cache=True)
    def _nb_isqrt(a):
        s = np.int64(np.sqrt(np.float64(a)))
        while s * s > a:
            s -= 1
        while (s + 1) * (s + 1) <= a:
            s += 1
        return s

    @njit(cache=True)
    def _nb_sqrt_ticks(counts, t, m):
        flat = counts.ravel()
        out = np.empty(flat.shape[0], dtype=np.int64)
        cap = (np.int64(1) << m) - 1
        shift = 2 * m + 2
        for i in range(flat.shape[0]):
            s = _nb_isqrt((np.int64(flat[i]) << shift) // t)
            v = (s + 1) >> 1
            out[i] = v if v < cap else cap
        return out.reshape(counts.shape)

    @njit(cache=True)
    def _nb_quantized_sum_squares(counts, t, m):
        n, k, x = counts.shape
        out = np.zeros(n, dtype=np.int64)
        cap = (np.int64(1) << m) - 1
        shift = 2 * m + 2
        for i in range(n):
            acc = np.int64(0)
            for j in range(x):
                col = np.int64(0)
                for s_ in range(k):
                    s = _nb_isqrt((np.int64(counts[i, s_, j]) << shift) // t)
                    v = (s + 1) >> 1
                    col += v if v < cap else cap
                acc += col * col
            out[i] = acc
        return out

    @njit(cache=True)
    def _nb_neg_entropy(q):
        v = 0.0
        if q > 0.0:
            v += q * np.log2(q)
        if q < 1.0:
            v += (1.0 - q) * np.log2(1.0 - q)
        return v

    @njit(cache=True)
    def _nb_kl_min(q1, q2, lr1, l1r1, lr2, l1r2):
        n = q1.shape[0]
        mcount = lr1.shape[0]
        out = np.empty(n)
        for i in range(n):
            a1 = q1[i]
            b1 = 1.0 - a1
            a2 = q2[i]
            b2 = 1.0 - a2
            best = -np.inf
            for j in range(mcount):
                c = 0.0
                if a1 > 0.0:
                    c += a1 * lr1[j]
                if b1 > 0.0:
                    c += b1 * l1r1[j]
                if a2 > 0.0:
                    c += a2 * lr2[j]
                if b2 > 0.0:
                    c += b2 * l1r2[j]
                if c > best:
                    best = c
            out[i] = _nb_neg_entropy(a1) + _nb_neg_entropy(a2) - best
        return out

    def _nb_sqrt_ticks_wrapper(counts, t, m):
        arr = np.ascontiguousarray(np.asarray(counts, dtype=np.int64))
        return _nb_sqrt_ticks(arr, np.int64(t), np.int64(m))

    def _nb_sum_squares_wrapper(counts, t, m):
        arr = np.ascontiguousarray(np.asarray(counts, dtype=np.int64))
        if arr.ndim == 2:
            return _nb_quantized_sum_squares(arr[None], np.int64(t), np.int64(m))[0]
        return _nb_quantized_sum_squares(arr, np.int64(t), np.int64(m))

    def _nb_kl_min_wrapper(q1, q2, lr1, l1r1, lr2, l1r2):
        f = lambda a: np.ascontiguousarray(a, dtype=np.float64)  # noqa: E731
        return _nb_kl_min(f(q1), f(q2), f(lr1), f(l1r1), f(lr2), f(l1r2))

    numba_impl = SimpleNamespace(
        sqrt_ticks=_nb_sqrt_ticks_wrapper,
        quantized_sum_squares=_nb_sum_squares_wrapper,
        kl_min_over_candidates=_nb_kl_min_wrapper,
    )


def _select_backend():
    requested = os.environ.get("ZMSDETECT_BACKEND", "").strip().lower()
    if requested == "numpy" or numba_impl is None:
        return "numpy", numpy_impl
    if requested not in ("", "numba"):
        raise ImportError(f"ZMSDETECT_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    return "numba", numba_impl


BACKEND, _impl = _select_backend()


def sqrt_ticks(counts, t, m):
    """Quantized square-root tick counts for integer symbol counts.

    Returns ``floor(2^m * sqrt(counts/t) + 1/2)`` computed in exact integer
    arithmetic, clamped to ``2^m - 1``.
    """
    return _impl.sqrt_ticks(counts, t, m)


def quantized_sum_squares(counts, t, m):
    """Integer ``sum_x (sum_k ticks[k, x])^2`` for each leading-axis trial.

    ``counts`` has shape ``(trials, K, X)`` (or ``(K, X)`` for a single
    trial).  The Hellinger statistic is ``K^2 - result / 4^m``.
    """
    return _impl.quantized_sum_squares(counts, t, m)


def kl_min_over_candidates(q1, q2, lr1, l1r1, lr2, l1r2):
    """Min over candidates j of D(q1||r1_j) + D(q2||r2_j) for Bernoulli pairs.

    Candidates are passed as precomputed ``log2 r`` and ``log2 (1 - r)``
    (``-inf`` allowed); results are in bits.
    """
    return _impl.kl_min_over_candidates(q1, q2, lr1, l1r1, lr2, l1r2)
