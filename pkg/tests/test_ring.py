import itertools
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from zmsdetect.errors import ParameterError
from zmsdetect.ring import RingElement, RingParams, add_mod, sub_mod, sum_mod

SMALL = RingParams(3, 2)
BIG = RingParams(9, 13)


def test_size_and_width():
    assert SMALL.size == 12
    assert SMALL.byte_width == 1
    assert RingParams(9, 13).byte_width == 3


def test_examples():
    assert add_mod(SMALL.element(11), SMALL.element(3)).ticks == 2
    assert sub_mod(SMALL.element(1), SMALL.element(5)).ticks == 8
    a = SMALL.element(7)
    assert a + SMALL.zero() == a
    assert (SMALL.zero() - a + a).ticks == 0


def test_exhaustive_group_laws():
    elems = [SMALL.element(i) for i in range(SMALL.size)]
    for a, b in itertools.product(elems, elems):
        assert (a - b + b) == a
        assert (a + b) == (b + a)
        assert (a + b - b) == a
        assert 0 <= (a + b).ticks < SMALL.size
        assert (a + (-a)).ticks == 0
    for a, b, c in itertools.product(elems[::3], elems, elems):
        assert (a + b) + c == a + (b + c)


@given(st.integers(0, BIG.size - 1), st.integers(0, BIG.size - 1), st.integers(0, BIG.size - 1))
def test_random_group_laws(x, y, z):
    a, b, c = BIG.element(x), BIG.element(y), BIG.element(z)
    assert a + b - b == a
    assert (a + b) + c == a + (b + c)
    assert a + b == b + a


def test_inverse_law_many_pairs():
    rng = np.random.default_rng(0)
    a = BIG.uniform(rng, 10_000)
    b = BIG.uniform(rng, 10_000)
    assert np.array_equal(BIG.sub(BIG.add(a, b), b), a)


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(1)
    a = SMALL.uniform(rng, 50)
    b = SMALL.uniform(rng, 50)
    expect = [add_mod(SMALL.element(x), SMALL.element(y)).ticks for x, y in zip(a, b)]
    assert list(SMALL.add(a, b)) == expect


def test_sum_mod_order_independent():
    rng = random.Random(2)
    items = [BIG.element(rng.randrange(BIG.size)) for _ in range(20)]
    ref = sum_mod(items)
    for _ in range(1000):
        rng.shuffle(items)
        assert sum_mod(items) == ref
    assert sum_mod([items[0]]) == items[0]
    assert ref.ticks == BIG.sum([e.ticks for e in items])


def test_sum_large_ring_no_overflow():
    p = RingParams(2**40, 20)
    vals = np.full(4000, p.size - 1, dtype=np.int64)
    assert int(p.sum(vals)) == (4000 * (p.size - 1)) % p.size


def test_errors():
    with pytest.raises(ParameterError):
        sum_mod([])
    with pytest.raises(ParameterError):
        add_mod(SMALL.element(1), BIG.element(1))
    with pytest.raises(ParameterError):
        RingParams(0, 2)
    with pytest.raises(ParameterError):
        RingElement(12, SMALL)
    with pytest.raises(ParameterError):
        SMALL.check_network(3)
    with pytest.raises(ParameterError):
        SMALL.from_value(0.3)


def test_value_and_bytes():
    e = SMALL.from_value(2.75)
    assert e.ticks == 11 and float(e) == 2.75
    assert RingElement.from_bytes(e.to_bytes(), SMALL) == e
    with pytest.raises(ParameterError):
        SMALL.decode(bytes([12]))
