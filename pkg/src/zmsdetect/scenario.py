"""Spectrum-sensing Monte Carlo study.

A source sits uniformly in a 2 km disk and K sensors uniformly in a
concentric 1 km disk.  Each sensor measures received power t times,
quantizes each reading to one of 128 dBm levels, and the network runs the
diameter test on the resulting types.  Under H0 the source is silent.

Received linear power is ``theta * S * 10^(-L(d)/10) + N * E`` with
``E ~ Exp(1)`` (chi-square with two degrees of freedom, halved).

Path loss ``L(d)`` in dB:

* ``d <= breakpoint_km``: free-space loss at the carrier frequency;
* ``breakpoint_km < d < seam_km``: linear in ``log10(d)`` between the
  free-space value at the breakpoint and the Hata value at the seam;
* ``d >= seam_km``: Okumura-Hata with the selected environment correction.

The environments are ``urban`` (plain Hata), ``suburban`` (Hata minus
``2 log10(f/28)^2 + 5.4``) and ``open`` (Hata minus
``4.78 log10(f)^2 - 18.33 log10(f) + 40.94``).  ``free-space`` uses the
free-space formula at every distance.

For the bulk study the per-sensor level histogram is drawn directly from
``Multinomial(t, pmf)``, where the pmf over levels is computed exactly
from the exponential CDF at the quantizer bin edges.  This has the same
law as quantizing t independent ``sample_power`` draws.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .detection import calibrate_worst_case
from .errors import InputError, ParameterError
from .protocol import ProtocolConfig, generate_masks, obfuscate, run_on_types, statistic_numerator
from .ring import RingParams
from .typestat import EmpiricalType

log = logging.getLogger(__name__)

PATH_LOSS_MODELS = ("suburban", "urban", "open", "free-space")
STATISTIC_PATHS = ("plaintext", "masked", "protocol")


@dataclass(frozen=True)
class ScenarioConfig:
    source_region_radius_km: float = 2.0
    sensor_region_radius_km: float = 1.0
    K: int = 8
    t_values: tuple = (360, 420, 480, 540, 600)
    carrier_MHz: float = 3625.0
    source_antenna_m: float = 20.0
    sensor_antenna_m: float = 1.5
    source_power_dBm: float = 25.0
    noise_power_dBm: float = -103.0
    quantizer_levels: int = 128
    quantizer_min_dBm: float = -130.0
    quantizer_max_dBm: float = -60.0
    frac_bits_m: int = 13
    path_loss_model: str = "suburban"
    breakpoint_km: float = 0.1
    seam_km: float = 1.0
    seed: int = 0
    configs: int = 10
    trials: int = 10_000
    lambda_targets: tuple = (0.05, 0.01, 0.005)
    roc_K: tuple | None = None  # defaults to (K, K - 1)
    roc_t: int = 600
    roc_points: int = 101
    statistic_path: str = "plaintext"
    scheme: str = "elgamal"
    security_n: int = 256

    def __post_init__(self):
        if self.K < 2:
            raise ParameterError("K must be at least 2")
        if self.configs < 1 or self.trials < 1:
            raise ParameterError("configs and trials must be positive")
        if not self.t_values or min(self.t_values) < 1:
            raise ParameterError("t_values must be positive")
        if self.path_loss_model not in PATH_LOSS_MODELS:
            raise ParameterError(f"path_loss_model must be one of {PATH_LOSS_MODELS}")
        if self.statistic_path not in STATISTIC_PATHS:
            raise ParameterError(f"statistic_path must be one of {STATISTIC_PATHS}")
        if self.quantizer_levels < 2 or self.quantizer_max_dBm <= self.quantizer_min_dBm:
            raise ParameterError("quantizer needs at least two levels over a positive range")
        if not 0 < self.breakpoint_km < self.seam_km:
            raise ParameterError("need 0 < breakpoint_km < seam_km")
        if self.roc_K is None:
            object.__setattr__(self, "roc_K", (self.K, self.K - 1) if self.K > 2 else (self.K,))
        if any(k < 2 or k > self.K for k in self.roc_K):
            raise ParameterError("roc_K entries must be in [2, K]")
        if any(not 0 < lt <= 1 for lt in self.lambda_targets):
            raise ParameterError("lambda targets must be in (0, 1]")

    @property
    def levels_dBm(self) -> np.ndarray:
        return np.linspace(self.quantizer_min_dBm, self.quantizer_max_dBm, self.quantizer_levels)

    @property
    def ring(self) -> RingParams:
        return RingParams(self.K + 1, self.frac_bits_m)

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)


# ---------------------------------------------------------------------------
# config file: flat ``key = value`` lines, ``#`` comments
# ---------------------------------------------------------------------------


def _parse_value(raw: str, default):
    raw = raw.strip()
    if default is None or isinstance(default, tuple):
        kind = type(default[0]) if default else (int if default is None else float)
        return tuple(kind(v) for v in raw.replace(",", " ").split())
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    return type(default)(raw)


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def parse_config(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    cp.read_string("[scenario]\n" + text)
    defaults = ScenarioConfig()
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    kw = {}
    for key, raw in cp["scenario"].items():
        if key not in known:
            raise InputError(f"unknown scenario key {key!r}")
        try:
            kw[key] = _parse_value(raw, getattr(defaults, key))
        except ValueError as exc:
            raise InputError(f"bad value for {key}: {raw!r}") from exc
    return ScenarioConfig(**kw)


def format_config(cfg: ScenarioConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------


def free_space_loss_dB(distance_km, carrier_MHz: float):
    return 20 * np.log10(distance_km) + 20 * math.log10(carrier_MHz) + 32.45


def hata_loss_dB(distance_km, cfg: ScenarioConfig, environment: str | None = None):
    env = environment or cfg.path_loss_model
    lf = math.log10(cfg.carrier_MHz)
    hb, hm = cfg.source_antenna_m, cfg.sensor_antenna_m
    a_hm = (1.1 * lf - 0.7) * hm - (1.56 * lf - 0.8)
    L = (69.55 + 26.16 * lf - 13.82 * math.log10(hb) - a_hm
         + (44.9 - 6.55 * math.log10(hb)) * np.log10(distance_km))
    if env == "suburban":
        L = L - (2 * math.log10(cfg.carrier_MHz / 28) ** 2 + 5.4)
    elif env == "open":
        L = L - (4.78 * lf ** 2 - 18.33 * lf + 40.94)
    return L


def hata_slope_dB_per_decade(cfg: ScenarioConfig) -> float:
    return 44.9 - 6.55 * math.log10(cfg.source_antenna_m)


def path_loss_dB(distance_km, cfg: ScenarioConfig, model: str | None = None):
    model = model or cfg.path_loss_model
    if model not in PATH_LOSS_MODELS:
        raise ParameterError(f"unknown path-loss model {model!r}")
    d = np.asarray(distance_km, dtype=np.float64)
    if np.any(~(d > 0)):
        raise InputError("distance must be positive")
    if model == "free-space":
        out = free_space_loss_dB(d, cfg.carrier_MHz)
    else:
        bp, seam = cfg.breakpoint_km, cfg.seam_km
        fs_bp = free_space_loss_dB(bp, cfg.carrier_MHz)
        hata_seam = hata_loss_dB(seam, cfg, model)
        mid = fs_bp + (hata_seam - fs_bp) * np.log10(d / bp) / math.log10(seam / bp)
        out = np.where(d <= bp, free_space_loss_dB(np.minimum(d, bp), cfg.carrier_MHz),
                       np.where(d < seam, mid, hata_loss_dB(np.maximum(d, seam), cfg, model)))
    return float(out) if out.ndim == 0 else out


def dbm_to_mw(p_dBm):
    return 10.0 ** (np.asarray(p_dBm, dtype=np.float64) / 10)


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


def _uniform_disk(rng: np.random.Generator, radius: float, n: int) -> np.ndarray:
    r = radius * np.sqrt(rng.random(n))
    a = 2 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(a), r * np.sin(a)])


@dataclass(frozen=True)
class Placement:
    source: np.ndarray
    sensors: np.ndarray

    @classmethod
    def random(cls, cfg: ScenarioConfig, rng: np.random.Generator) -> "Placement":
        return cls(_uniform_disk(rng, cfg.source_region_radius_km, 1)[0],
                   _uniform_disk(rng, cfg.sensor_region_radius_km, cfg.K))

    @classmethod
    def equidistant(cls, K: int, radius_km: float) -> "Placement":
        """Source at the center, sensors evenly spaced on a circle around it."""
        a = 2 * np.pi * np.arange(K) / K
        return cls(np.zeros(2), radius_km * np.column_stack([np.cos(a), np.sin(a)]))

    @property
    def K(self) -> int:
        return self.sensors.shape[0]

    def distances_km(self) -> np.ndarray:
        # clamp at 1 m: the far-field formulas are meaningless closer in
        return np.maximum(np.linalg.norm(self.sensors - self.source, axis=1), 1e-3)

    def subset(self, K: int) -> "Placement":
        return Placement(self.source, self.sensors[:K])


# ---------------------------------------------------------------------------
# measurement model
# ---------------------------------------------------------------------------


def quantize_dBm(p_dBm, cfg: ScenarioConfig):
    """Nearest quantizer level index, clamped to the level range."""
    lo, hi, n = cfg.quantizer_min_dBm, cfg.quantizer_max_dBm, cfg.quantizer_levels
    idx = np.floor((np.asarray(p_dBm, dtype=np.float64) - lo) * (n - 1) / (hi - lo) + 0.5)
    out = np.clip(idx, 0, n - 1).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def signal_mw(theta: int, placement: Placement, k: int, cfg: ScenarioConfig) -> float:
    if not theta:
        return 0.0
    loss = path_loss_dB(placement.distances_km()[k], cfg)
    return float(dbm_to_mw(cfg.source_power_dBm - loss))


def sample_power(theta: int, placement: Placement, k: int, cfg: ScenarioConfig,
                 rng: np.random.Generator, size=None):
    """Quantized received power level(s) of sensor ``k``."""
    return quantize_dBm(10 * np.log10(received_power_mw(theta, placement, k, cfg, rng, size)), cfg)


def received_power_mw(theta: int, placement: Placement, k: int, cfg: ScenarioConfig,
                      rng: np.random.Generator, size=None):
    noise = dbm_to_mw(cfg.noise_power_dBm) * rng.exponential(1.0, size)
    return signal_mw(theta, placement, k, cfg) + noise


def level_pmf(theta: int, placement: Placement, k: int, cfg: ScenarioConfig) -> np.ndarray:
    """Exact distribution of ``sample_power`` over the quantizer levels."""
    return _level_pmf_from_signal(signal_mw(theta, placement, k, cfg), cfg)


def _level_pmf_from_signal(s_mw: float, cfg: ScenarioConfig) -> np.ndarray:
    lv = cfg.levels_dBm
    edges_mw = dbm_to_mw((lv[:-1] + lv[1:]) / 2)
    n_mw = float(dbm_to_mw(cfg.noise_power_dBm))
    cdf = np.where(edges_mw > s_mw, -np.expm1(np.minimum(-(edges_mw - s_mw) / n_mw, 0.0)), 0.0)
    cdf = np.concatenate([[0.0], cdf, [1.0]])
    return np.maximum(np.diff(cdf), 0.0)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def _statistic_batch(counts: np.ndarray, t: int, cfg: ScenarioConfig, path: str,
                     rng: np.random.Generator) -> np.ndarray:
    """d~ for a (trials, K, X) batch of level histograms."""
    K = counts.shape[1]
    m = cfg.frac_bits_m
    scale2 = float(4 ** m)
    if path == "plaintext":
        ss = kernels.quantized_sum_squares(counts, t, m)
        return (K * K * scale2 - ss) / scale2
    ring = RingParams(K + 1, m)
    if path == "masked":
        q = kernels.sqrt_ticks(counts, t, m)
        out = np.empty(counts.shape[0])
        for lo in range(0, counts.shape[0], 512):
            qq = q[lo:lo + 512]
            g = obfuscate(qq, generate_masks(qq.shape[0], K, qq.shape[2], ring, rng), ring)
            out[lo:lo + 512] = statistic_numerator(g, K, ring) / scale2
        return out
    pcfg = ProtocolConfig(K, counts.shape[2], ring, cfg.scheme, cfg.security_n)
    seeds = rng.integers(0, 2**63, size=counts.shape[0])
    return np.array([run_on_types(pcfg, [EmpiricalType(tuple(int(c) for c in row)) for row in trial],
                                  0.0, seed=int(s)).statistic
                     for trial, s in zip(counts, seeds)])


def _trial_rng(cfg: ScenarioConfig, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=tuple(int(k) for k in key)))


def placements_for(cfg: ScenarioConfig) -> list[Placement]:
    rng = _trial_rng(cfg, 0)
    return [Placement.random(cfg, rng) for _ in range(cfg.configs)]


def simulate_counts(cfg: ScenarioConfig, placement: Placement, theta: int, t: int,
                    rng: np.random.Generator, trials: int) -> np.ndarray:
    """(trials, K, levels) histograms of t quantized readings per sensor."""
    K = placement.K
    out = np.empty((trials, K, cfg.quantizer_levels), dtype=np.int64)
    for k in range(K):
        out[:, k, :] = rng.multinomial(t, level_pmf(theta, placement, k, cfg), size=trials)
    return out


@dataclass(frozen=True)
class TrialRecord:
    config_id: int
    theta: int
    t: int
    levels: np.ndarray
    statistic: float
    decision: int


def simulate_trial(cfg: ScenarioConfig, placement: Placement, config_id: int, theta: int, t: int,
                   gamma: float, rng: np.random.Generator, path: str | None = None) -> TrialRecord:
    """One trial from per-reading draws, keeping the raw level sequences."""
    levels = np.stack([sample_power(theta, placement, k, cfg, rng, size=t) for k in range(placement.K)])
    counts = np.stack([np.bincount(row, minlength=cfg.quantizer_levels) for row in levels])
    stat = float(_statistic_batch(counts[None], t, cfg, path or cfg.statistic_path, rng)[0])
    return TrialRecord(config_id, theta, t, levels, stat, int(stat >= gamma))


def _task(args):
    cfg, placement, config_id, theta, t = args
    rng = _trial_rng(cfg, 1, t, config_id, theta)
    counts = simulate_counts(cfg, placement, theta, t, rng, cfg.trials)
    stats = {}
    for K in sorted(set((cfg.K,) + tuple(cfg.roc_K)), reverse=True):
        stats[K] = _statistic_batch(counts[:, :K], t, cfg, cfg.statistic_path, rng)
    return (t, config_id, theta), stats


# ---------------------------------------------------------------------------
# study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentRow:
    t: int
    lambda_target: float
    gamma: float
    mu: float
    lam: float
    exponent: float
    stderr: float
    worst_config: int


@dataclass(frozen=True)
class RocRow:
    K: int
    gamma: float
    mu: float
    lam: float


@dataclass
class StudyResult:
    config: ScenarioConfig
    exponents: list = field(default_factory=list)
    roc: list = field(default_factory=list)
    roc_comparison: dict = field(default_factory=dict)

    def exponent_series(self, lambda_target: float):
        rows = sorted((r for r in self.exponents if r.lambda_target == lambda_target), key=lambda r: r.t)
        return rows

    def write(self, out_dir) -> list:
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        p = os.path.join(out_dir, "exponents.csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "lambda_target", "gamma", "exponent_estimate"])
            for r in self.exponents:
                w.writerow([r.t, r.lambda_target, f"{r.gamma:.10g}", f"{r.exponent:.10g}"])
        paths.append(p)
        p = os.path.join(out_dir, "error_rates.csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "lambda_target", "gamma", "mu", "lambda", "exponent_estimate",
                        "exponent_stderr", "worst_config"])
            for r in self.exponents:
                w.writerow([r.t, r.lambda_target, f"{r.gamma:.10g}", f"{r.mu:.10g}", f"{r.lam:.10g}",
                            f"{r.exponent:.10g}", f"{r.stderr:.10g}", r.worst_config])
        paths.append(p)
        p = os.path.join(out_dir, "roc.csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["K", "gamma", "mu", "lambda"])
            for r in self.roc:
                w.writerow([r.K, f"{r.gamma:.10g}", f"{r.mu:.10g}", f"{r.lam:.10g}"])
        paths.append(p)
        return paths


def _worst_rate(sorted_by_config: list, gammas: np.ndarray, kind: str) -> np.ndarray:
    """Max over configs of the type-I (``mu``) or type-II (``lam``) rate."""
    out = np.zeros(gammas.shape)
    for s in sorted_by_config:
        if kind == "mu":
            r = 1 - np.searchsorted(s, gammas, side="left") / s.size
        else:
            r = np.searchsorted(s, gammas, side="left") / s.size
        out = np.maximum(out, r)
    return out


def roc_curve(h0: list, h1: list):
    """Worst-case (gamma, mu, lambda) at every distinct threshold."""
    h0s = [np.sort(v) for v in h0]
    h1s = [np.sort(v) for v in h1]
    gammas = np.unique(np.concatenate(h0s + h1s + [np.array([np.inf])]))
    return gammas, _worst_rate(h0s, gammas, "mu"), _worst_rate(h1s, gammas, "lam")


def best_miss_at(mu_levels, mu: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Smallest worst-case miss rate among thresholds with false alarm <= level."""
    out = np.empty(len(mu_levels))
    for i, lvl in enumerate(mu_levels):
        ok = mu <= lvl + 1e-12
        out[i] = lam[ok].min() if ok.any() else 1.0
    return out


def run_study(cfg: ScenarioConfig, workers: int = 1, placements: list | None = None) -> StudyResult:
    placements = placements if placements is not None else placements_for(cfg)
    if len(placements) != cfg.configs:
        cfg = cfg.replace(configs=len(placements))
    ts = sorted(set(cfg.t_values) | ({cfg.roc_t} if cfg.roc_K else set()))
    jobs = [(cfg, placements[c], c, theta, t) for t in ts for c in range(cfg.configs) for theta in (0, 1)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            done = dict(ex.map(_task, jobs, chunksize=1))
    else:
        done = dict(map(_task, jobs))

    result = StudyResult(cfg)
    n = cfg.trials
    for t in sorted(cfg.t_values):
        h0 = {c: done[(t, c, 0)][cfg.K] for c in range(cfg.configs)}
        h1 = {c: done[(t, c, 1)][cfg.K] for c in range(cfg.configs)}
        for lt in cfg.lambda_targets:
            gamma = calibrate_worst_case(h1, lt)
            mus = {c: float(np.mean(v >= gamma)) for c, v in h0.items()}
            worst = max(mus, key=lambda c: (mus[c], -c))
            mu = mus[worst]
            lam = max(float(np.mean(v < gamma)) for v in h1.values())
            if mu > 0:
                exponent = -math.log2(mu) / t + 0.0  # no negative zero
                stderr = math.sqrt(mu * (1 - mu) / n) / (mu * math.log(2) * t)
            else:
                exponent, stderr = math.inf, math.inf
            result.exponents.append(ExponentRow(t, lt, gamma, mu, lam, exponent, stderr, worst))
        log.info("t=%d done", t)

    mu_levels = np.geomspace(1e-3, 0.5, 40)
    for K in cfg.roc_K:
        h0 = [done[(cfg.roc_t, c, 0)][K] for c in range(cfg.configs)]
        h1 = [done[(cfg.roc_t, c, 1)][K] for c in range(cfg.configs)]
        gammas, mu, lam = roc_curve(h0, h1)
        pick = np.unique(np.linspace(0, gammas.size - 1, cfg.roc_points).round().astype(int))
        for i in pick:
            result.roc.append(RocRow(K, float(gammas[i]), float(mu[i]), float(lam[i])))
        result.roc_comparison[K] = best_miss_at(mu_levels, mu, lam)
    result.roc_comparison["mu_levels"] = mu_levels
    return result


def roc_dominates(result: StudyResult, better: int, worse: int, n_se: float = 2.0) -> bool:
    """True when ``better`` misses no more often than ``worse`` at every matched
    false-alarm level, allowing ``n_se`` Monte Carlo standard errors of the difference."""
    a = result.roc_comparison[better]
    b = result.roc_comparison[worse]
    n = result.config.trials
    slack = n_se * np.sqrt((a * (1 - a) + b * (1 - b)) / n)
    return bool(np.all(a <= b + slack))


def exponent_trend_ok(rows, n_se: float = 2.0) -> bool:
    """Positive at every t and non-decreasing in t within ``n_se`` standard errors."""
    rows = sorted(rows, key=lambda r: r.t)
    if any(not r.exponent > 0 for r in rows):
        return False
    for a, b in zip(rows, rows[1:]):
        if math.isinf(b.exponent):
            continue
        if math.isinf(a.exponent) or b.exponent < a.exponent - n_se * math.hypot(a.stderr, b.stderr):
            return False
    return True
