"""Hypothesis tests over types and threshold calibration.

The diameter test decides H1 when the diameter statistic reaches the
threshold.  The Hoeffding test thresholds Delta_0 of the joint type
instead.  Calibration picks the largest threshold whose empirical miss
rate stays within a target.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CapabilityError, InputError, ParameterError
from .exponents import ExponentProblem, delta0
from .typestat import (
    EmpiricalType, QuantizedSqrtType, diameter_max, hellinger_diameter, quantized_statistic,
)


class Decision(enum.IntEnum):
    H0 = 0
    H1 = 1


def diameter_statistic(types) -> float:
    """Hellinger diameter of K exact types, quantized types or marginal rows."""
    types = list(types)
    if len(types) < 2:
        raise ParameterError("the diameter needs at least two types")
    if all(isinstance(t, QuantizedSqrtType) for t in types):
        return float(quantized_statistic(types))
    if all(isinstance(t, EmpiricalType) for t in types):
        return hellinger_diameter([t.as_array() for t in types])
    return hellinger_diameter(types)


def _check_gamma(gamma):
    if not gamma >= 0:
        raise ParameterError(f"threshold must be non-negative, got {gamma}")


def diameter_decide(types, gamma: float) -> Decision:
    _check_gamma(gamma)
    stat = diameter_statistic(types)
    if isinstance(stat, Fraction):
        return Decision(int(stat >= Fraction(gamma)))
    return Decision(int(stat >= gamma))


def hoeffding_decide(joint_type, gamma: float, d0: float, family: str = "joint") -> Decision:
    """H1 iff Delta_0 of the joint type reaches ``gamma``."""
    _check_gamma(gamma)
    p = np.asarray(joint_type, dtype=np.float64)
    K = p.ndim
    X = p.shape[0]
    problem = ExponentProblem(K, X, d0, diameter_max(K, X), family)
    return Decision(int(delta0(p, problem) >= gamma))


@dataclass(frozen=True)
class DiameterTest:
    threshold: float
    backend: str = "plaintext"

    def __post_init__(self):
        _check_gamma(self.threshold)
        if self.backend not in ("plaintext", "protocol"):
            raise ParameterError("backend must be 'plaintext' or 'protocol'")

    def decide(self, types) -> Decision:
        if self.backend == "protocol":
            from .protocol import ProtocolConfig, run_on_types  # local to avoid a cycle
            types = list(types)
            cfg = ProtocolConfig.default(len(types), len(types[0].counts))
            return Decision(run_on_types(cfg, types, self.threshold).decision)
        return diameter_decide(types, self.threshold)


@dataclass(frozen=True)
class HoeffdingTest:
    threshold: float
    d0: float
    family: str = "joint"

    def decide(self, joint_type) -> Decision:
        return hoeffding_decide(joint_type, self.threshold, self.d0, self.family)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def _samples(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64).ravel()
    if arr.size == 0:
        raise InputError("no samples to calibrate against")
    if np.any(np.isnan(arr)):
        raise InputError("samples contain NaN")
    return arr


def calibrate_threshold(samples, lambda_target: float) -> float:
    """Largest gamma whose empirical miss rate on H1 samples is <= target.

    The miss rate at gamma is the fraction of samples strictly below gamma.
    With ``k = floor(lambda * n)`` the answer is the (k+1)-th smallest
    sample, or ``+inf`` when ``k >= n``.  Targets below ``1/n`` cannot be
    resolved by ``n`` samples and raise CapabilityError.
    """
    s = np.sort(_samples(samples))
    n = s.size
    if not 0 < lambda_target <= 1:
        raise ParameterError(f"lambda_target must be in (0, 1], got {lambda_target}")
    if lambda_target < 1 / n:
        raise CapabilityError(
            f"lambda_target={lambda_target} is below the resolution floor 1/n={1 / n} of {n} samples")
    # largest k with k/n <= target, judged the way miss_rate computes the rate
    k = min(math.floor(lambda_target * n), n)
    while k < n and (k + 1) / n <= lambda_target:
        k += 1
    while k > 0 and k / n > lambda_target:
        k -= 1
    if k >= n:
        return math.inf
    return float(s[k])


def calibrate_worst_case(samples_by_config: Mapping, lambda_target: float) -> float:
    """Largest gamma meeting the target at every configuration simultaneously."""
    if not samples_by_config:
        raise InputError("no configurations")
    return min(calibrate_threshold(v, lambda_target) for v in samples_by_config.values())


def miss_rate(h1_samples, gamma: float) -> float:
    s = _samples(h1_samples)
    return float(np.mean(s < gamma))


def false_alarm_rate(h0_samples, gamma: float) -> float:
    s = _samples(h0_samples)
    return float(np.mean(s >= gamma))


def worst_case_rates(h0_by_config: Mapping, h1_by_config: Mapping, gamma: float):
    """(max type-I rate, max type-II rate) over configurations."""
    mu = max(false_alarm_rate(v, gamma) for v in h0_by_config.values())
    lam = max(miss_rate(v, gamma) for v in h1_by_config.values())
    return mu, lam


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

SAMPLE_COLUMNS = ("config_id", "theta", "t", "statistic")


@dataclass(frozen=True)
class StatisticSample:
    config_id: int
    theta: int
    t: int
    statistic: float


def write_samples(path, samples: Iterable[StatisticSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SAMPLE_COLUMNS)
        for s in samples:
            w.writerow([s.config_id, s.theta, s.t, repr(float(s.statistic))])


def read_samples(path) -> list[StatisticSample]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if tuple(r.fieldnames or ()) != SAMPLE_COLUMNS:
            raise InputError(f"expected columns {SAMPLE_COLUMNS}, got {r.fieldnames}")
        return [StatisticSample(int(row["config_id"]), int(row["theta"]), int(row["t"]),
                                float(row["statistic"])) for row in r]


def group_samples(samples: Sequence[StatisticSample], theta: int, t: int) -> dict:
    out: dict[int, list] = {}
    for s in samples:
        if s.theta == theta and s.t == t:
            out.setdefault(s.config_id, []).append(s.statistic)
    return {k: np.asarray(v) for k, v in out.items()}
