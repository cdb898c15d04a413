import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zmsdetect import kernels
from zmsdetect.errors import InputError, ParameterError
from zmsdetect.ring import RingParams
from zmsdetect.typestat import (
    Alphabet, EmpiricalType, compute_type, diameter_max, hellinger_diameter,
    marginals_of, pairwise_hellinger_sum, quantize_sqrt, quantized_statistic,
)


def test_compute_type():
    et = compute_type([0, 0, 1, 0], Alphabet(2))
    assert et.counts == (3, 1)
    assert et.probabilities == (Fraction(3, 4), Fraction(1, 4))
    assert compute_type([2, 2, 2], Alphabet(3)).counts == (0, 0, 3)
    a = compute_type([0, 1, 1], Alphabet(2))
    b = compute_type([1, 0], Alphabet(2))
    ab = compute_type([0, 1, 1, 1, 0], Alphabet(2))
    assert ab.counts == tuple(x + y for x, y in zip(a.counts, b.counts))
    with pytest.raises(InputError):
        compute_type([0, 2], Alphabet(2))
    with pytest.raises(InputError):
        compute_type([], Alphabet(2))


def test_row_roundtrip():
    et = EmpiricalType((3, 0, 5))
    assert EmpiricalType.from_row(et.to_row()) == et
    with pytest.raises(InputError):
        EmpiricalType.from_row([7, 3, 0, 5])


def test_quantize_examples():
    q = quantize_sqrt(EmpiricalType((1, 1)), RingParams(3, 3))
    assert q.ticks == (6, 6)
    assert abs(math.sqrt(0.5) - 0.75) <= 2 ** -4
    m = 5
    q = quantize_sqrt(EmpiricalType((4, 0)), RingParams(3, m))
    assert q.ticks == ((1 << m) - 1, 0)


def _float_reference(c, t, m):
    # independent rounding through decimal-free Fraction comparisons
    target = Fraction(c, t)
    j = math.isqrt(c * 4 ** m // t)
    best = None
    for cand in (j - 1, j, j + 1, j + 2):
        if cand < 0:
            continue
        # compare |cand/2^m - sqrt(target)| via squares of midpoints
        lo = Fraction(2 * cand - 1, 2 ** (m + 1))
        hi = Fraction(2 * cand + 1, 2 ** (m + 1))
        if (lo < 0 or lo * lo <= target) and target < hi * hi:
            best = cand
    return min(best, 2 ** m - 1)


@given(st.integers(1, 600), st.data(), st.integers(1, 13))
@settings(max_examples=300)
def test_sqrt_ticks_exact(t, data, m):
    c = data.draw(st.integers(0, t))
    got = int(kernels.sqrt_ticks(np.array([c]), t, m)[0])
    assert got == _float_reference(c, t, m)
    assert int(kernels.numpy_impl.sqrt_ticks(np.array([c]), t, m)[0]) == got


def test_quantization_bounds_random():
    rng = np.random.default_rng(3)
    ring = RingParams(9, 13)
    for _ in range(300):
        X = int(rng.integers(2, 17))
        t = int(rng.integers(1, 700))
        counts = rng.multinomial(t, rng.dirichlet(np.ones(X)))
        et = EmpiricalType(tuple(int(c) for c in counts))
        q = quantize_sqrt(et, ring).real_values()
        err = np.abs(np.sqrt(counts / t) - q)
        bound = np.where(counts == t, 2.0 ** -13, 2.0 ** -14)
        assert np.all(err <= bound + 1e-15)
        assert abs((q ** 2).sum() - 1) <= 2 ** -13 * X
        assert np.all(q < 1)


def test_quantize_idempotent_on_grid():
    # 1/4 has sqrt exactly 1/2, which is on every grid with m >= 1
    et = EmpiricalType((1, 3))
    q1 = quantize_sqrt(et, RingParams(3, 4))
    assert q1.ticks[0] == 8
    assert quantize_sqrt(et, RingParams(3, 4)) == q1


def test_hellinger_examples():
    assert hellinger_diameter([[0.3, 0.7]] * 4) == pytest.approx(0, abs=1e-12)
    assert hellinger_diameter([[1, 0], [0, 1]]) == pytest.approx(2)
    rng = np.random.default_rng(4)
    for q1, q2 in rng.random((1000, 2)):
        closed = 2 * (1 - math.sqrt(q1 * q2) - math.sqrt((1 - q1) * (1 - q2)))
        p = [[1 - q1, q1], [1 - q2, q2]]
        assert hellinger_diameter(p) == pytest.approx(closed, abs=1e-12)
        assert pairwise_hellinger_sum(p) == pytest.approx(closed, abs=1e-12)
    with pytest.raises(ParameterError):
        hellinger_diameter([[0.5, 0.5]])
    with pytest.raises(InputError):
        hellinger_diameter([[0.5, 0.6], [0.5, 0.5]])


def test_diameter_max_examples():
    assert diameter_max(2, 2) == 2
    assert diameter_max(3, 2) == 4
    assert diameter_max(4, 8) == 12


def _bound_attainer(K, X):
    # spread K point masses over X symbols as evenly as possible
    p = np.zeros((K, X))
    for k in range(K):
        p[k, k % X] = 1
    return p


def test_diameter_bounds_random_search():
    rng = np.random.default_rng(5)
    for _ in range(100_000 // 50):
        K = int(rng.integers(2, 9))
        X = int(rng.integers(2, 17))
        dm = diameter_max(K, X)
        for alpha in (0.05, 1.0):
            p = rng.dirichlet(np.full(X, alpha), size=K)
            d = hellinger_diameter(p)
            assert -1e-9 <= d <= dm + 1e-9
    for K in range(2, 9):
        for X in range(2, 17):
            assert hellinger_diameter(_bound_attainer(K, X)) == pytest.approx(diameter_max(K, X))


def test_diameter_max_vs_local_search():
    rng = np.random.default_rng(6)
    K, X = 4, 8
    best = 0.0
    for _ in range(25_000):
        p = rng.dirichlet(np.full(X, 0.02), size=K)
        best = max(best, hellinger_diameter(p))
    assert best <= 12 + 1e-9
    assert best > 11


def test_continuity_probe():
    rng = np.random.default_rng(7)
    for _ in range(200):
        K, X = 5, 6
        p = rng.dirichlet(np.ones(X), size=K)
        eps = 1e-4
        r = rng.dirichlet(np.ones(X))
        p2 = p.copy()
        p2[0] = (1 - eps) * p[0] + eps * r
        assert abs(hellinger_diameter(p) - hellinger_diameter(p2)) <= 4 * K * K * math.sqrt(eps)


def test_marginals_of():
    joint = np.array([[0.1, 0.2], [0.3, 0.4]])
    m = marginals_of(joint)
    assert np.allclose(m, [[0.3, 0.7], [0.4, 0.6]])


def test_quantized_statistic_exact():
    ring = RingParams(3, 3)
    qa = quantize_sqrt(EmpiricalType((1, 1)), ring)
    qb = quantize_sqrt(EmpiricalType((2, 0)), ring)
    # ticks (6,6) and (7,0): columns 13, 6 -> 4 - (169+36)/64
    assert quantized_statistic([qa, qb]) == Fraction(4) - Fraction(205, 64)
