import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zmsdetect.detection import (
    Decision, DiameterTest, HoeffdingTest, StatisticSample, calibrate_threshold,
    calibrate_worst_case, diameter_decide, diameter_statistic, false_alarm_rate,
    hoeffding_decide, miss_rate, read_samples, worst_case_rates, write_samples,
)
from zmsdetect.errors import CapabilityError, InputError, ParameterError
from zmsdetect.exponents import ExponentProblem, binary_solver, delta0, product_joint
from zmsdetect.ring import RingParams
from zmsdetect.typestat import EmpiricalType, quantize_sqrt


def test_diameter_decide_examples():
    same = [EmpiricalType((2, 3))] * 3
    assert diameter_decide(same, 0.1) == Decision.H0
    assert diameter_decide([EmpiricalType((5, 0)), EmpiricalType((0, 5))], 1.9) == Decision.H1
    assert diameter_decide([[1, 0], [0, 1]], 1.9) == Decision.H1
    assert diameter_decide(same, 0.0) == Decision.H1
    with pytest.raises(ParameterError):
        diameter_decide(same, -1)


def test_quantized_types_within_band():
    rng = np.random.default_rng(0)
    ring = RingParams(5, 13)
    for _ in range(200):
        types = [EmpiricalType(tuple(int(c) for c in rng.multinomial(40, [0.2, 0.3, 0.5])))
                 for _ in range(4)]
        q = [quantize_sqrt(e, ring) for e in types]
        exact, quant = diameter_statistic(types), diameter_statistic(q)
        assert abs(exact - quant) <= 16 * 3 / 2 ** 13
        gamma = float(rng.uniform(0, 1))
        if diameter_decide(types, gamma) != diameter_decide(q, gamma):
            assert abs(exact - gamma) <= 16 * 3 / 2 ** 13


def test_monotone_in_gamma():
    types = [EmpiricalType((3, 1)), EmpiricalType((1, 3))]
    decisions = [diameter_decide(types, g) for g in np.linspace(0, 2, 50)]
    assert all(a >= b for a, b in zip(decisions, decisions[1:]))


def test_protocol_backend():
    types = [EmpiricalType((5, 0)), EmpiricalType((0, 5))]
    assert DiameterTest(1.9, backend="protocol").decide(types) == Decision.H1


def test_hoeffding_examples():
    same = product_joint([0.3, 0.7], [0.3, 0.7])
    assert hoeffding_decide(same, 0.01, 0.0) == Decision.H0
    p = product_joint([0.9, 0.1], [0.1, 0.9])
    assert hoeffding_decide(p, 0.5, 0.0, family="product") == Decision.H1
    assert hoeffding_decide(p, 0.5, 0.0) == Decision.H1
    assert HoeffdingTest(1.1, 0.0, "product").decide(p) == Decision.H0
    with pytest.raises(CapabilityError):
        hoeffding_decide(np.full((2,) * 4, 1 / 16), 0.1, 0.0)


def test_hoeffding_vs_diameter_mapping():
    # d(p) >= gamma*(alpha) implies Delta0(p) >= alpha: the diameter test's
    # rejection region sits inside the Hoeffding test's
    s = binary_solver(0.0, 0.5, 4e-3)
    pr = ExponentProblem(2, 2, 0.0, 0.5)
    rng = np.random.default_rng(1)
    for alpha in (0.1, 0.3, 0.6):
        gs = s.gamma_star(alpha)
        for q1, q2 in rng.random((50, 2)):
            marg = [[1 - q1, q1], [1 - q2, q2]]
            if diameter_decide(marg, gs) == Decision.H1:
                assert delta0(product_joint(*marg), pr) >= alpha - 1e-3


def _scan_oracle(samples, lam):
    # largest candidate threshold meeting the constraint, by brute force
    cands = sorted(set(samples)) + [math.inf]
    best = None
    for g in cands:
        if np.mean(np.asarray(samples) < g) <= lam:
            best = g
    return best


def test_calibration_examples():
    assert calibrate_threshold([1.0, 2.0, 3.0], 1.0) == math.inf
    assert calibrate_threshold([0.7] * 10, 0.5) == 0.7
    rng = np.random.default_rng(2)
    s = np.concatenate([rng.normal(0, 0.1, 500), rng.normal(5, 0.1, 500)])
    g = calibrate_threshold(s, 0.5)
    assert 0.2 < g < 4.8
    assert g == _scan_oracle(list(s), 0.5)
    with pytest.raises(CapabilityError):
        calibrate_threshold([1.0, 2.0], 0.1)
    with pytest.raises(InputError):
        calibrate_threshold([], 0.1)


@given(st.lists(st.integers(0, 20), min_size=1, max_size=40), st.floats(0.01, 1.0))
@settings(max_examples=200)
def test_calibration_matches_scan(values, lam):
    samples = [v / 4 for v in values]
    if lam < 1 / len(samples):
        return
    assert calibrate_threshold(samples, lam) == _scan_oracle(samples, lam)
    assert miss_rate(samples, calibrate_threshold(samples, lam)) <= lam


def test_worst_case():
    by = {0: [1, 2, 3, 4], 1: [0.5, 0.6, 0.7, 0.8]}
    g = calibrate_worst_case(by, 0.25)
    assert g == 0.6
    mu, lam = worst_case_rates({0: [0.1, 0.7], 1: [0.0, 0.0]}, by, g)
    assert mu == 0.5 and lam == 0.25
    assert false_alarm_rate([1, 2], 1.5) == 0.5


def test_samples_csv(tmp_path):
    rows = [StatisticSample(0, 1, 360, 0.125), StatisticSample(3, 0, 420, 1 / 3)]
    write_samples(tmp_path / "s.csv", rows)
    assert read_samples(tmp_path / "s.csv") == rows
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(InputError):
        read_samples(tmp_path / "bad.csv")


def test_calibration_float_edges():
    assert calibrate_threshold([0.0, 0.0], 0.9999999999999999) == 0.0
    assert calibrate_threshold([float(i) for i in range(10)], 0.3) == 3.0
    assert calibrate_threshold([float(i) for i in range(3)], 1 / 3) == 1.0
