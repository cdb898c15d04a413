"""Privacy games against colluding sensors.

The colluding set is the last ``L`` sensors; the honest set is the rest.
Three pieces live here:

* the type estimation game (TEA): the attacker sees its own types, keys
  and masks, every ciphertext and every obfuscated report, and outputs an
  estimate of the honest sensors' quantized square-root types;
* the type discrimination game (TDA): the attacker picks two honest type
  collections with equal modular sums and must tell which one was used;
* an exact / Monte Carlo check of the mask-uniformity property: given the
  masks two honest sensors send to the colluders, the column sums those
  two honest rows contribute to the honest sensors are uniform on the
  coset fixed by the zero-sum constraint.

Attackers hook into key generation, mask generation and estimation.  The
harness validates every hook output (keys of the right scheme, mask rows
that sum to zero, estimates of the right shape) and disqualifies deviating
attackers.  The colluders' reports are always computed by the harness, so
they satisfy the report equation by construction.

A polynomial-time bound cannot be checked, so each hook call gets a
wall-clock budget instead.

The TEA baseline is the independent guesser: the attacker's own estimate
scored against a fresh draw of the honest types from their conditional
law given the leaked sum and the colluders' types.  The harness averages
that probability exactly over the coset instead of sampling it.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import math
import random
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from types import MappingProxyType

import numpy as np
from scipy import stats

from .crypto import Ciphertext, EncryptionScheme, KeyPair, get_scheme
from .errors import (
    BudgetExceeded, CapabilityError, ContextAccessError, DecryptionError, DisqualificationError, InputError,
    ParameterError,
)
from .kernels import sqrt_ticks
from .ring import RingParams

BLOCK = 500


# ---------------------------------------------------------------------------
# parameters and the type prior
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GameParams:
    K: int = 3
    L: int = 1
    alphabet_size: int = 2
    m: int = 3
    t: int = 8
    scheme: str = "elgamal"
    n: int = 256
    tau: float = 0.2
    N: int | None = None
    budget_s: float = 5.0

    def __post_init__(self):
        if self.K < 2 or not 0 <= self.L < self.K:
            raise ParameterError("need K >= 2 and 0 <= L < K")
        if self.alphabet_size < 1 or self.t < 1:
            raise ParameterError("alphabet_size and t must be positive")
        if self.tau < 0:
            raise ParameterError("tau must be non-negative")
        get_scheme(self.scheme)

    @property
    def ring(self) -> RingParams:
        return RingParams(self.N or self.K + 1, self.m)

    @property
    def honest(self) -> tuple:
        return tuple(range(self.K - self.L))

    @property
    def colluders(self) -> tuple:
        return tuple(range(self.K - self.L, self.K))

    @property
    def guarantee_regime(self) -> bool:
        return self.L <= self.K - 2

    def to_dict(self) -> dict:
        return {"K": self.K, "L": self.L, "alphabet_size": self.alphabet_size, "m": self.m,
                "t": self.t, "scheme": self.scheme, "n": self.n, "tau": self.tau,
                "N": self.ring.modulus_N}


@dataclass(frozen=True)
class TypeSource:
    """Independent sensors; sensor k draws t i.i.d. symbols from ``probs[k]``."""

    probs: tuple
    t: int
    m: int

    @classmethod
    def default(cls, params: GameParams) -> "TypeSource":
        X = params.alphabet_size
        rows = []
        for k in range(params.K):
            w = np.arange(1, X + 1, dtype=float) + k
            rows.append(tuple(float(v) for v in w / w.sum()))
        return cls(tuple(rows), params.t, params.m)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2 or np.any(p < 0) or not np.allclose(p.sum(axis=1), 1):
            raise InputError("probs must be a K x |X| array of distributions")

    @property
    def K(self) -> int:
        return len(self.probs)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        counts = np.stack([rng.multinomial(self.t, p) for p in self.probs])
        return sqrt_ticks(counts, self.t, self.m)

    @cached_property
    def per_sensor(self) -> list:
        """Per sensor: (distinct tick vectors, their probabilities)."""
        X = len(self.probs[0])
        comps = [c for c in itertools.product(range(self.t + 1), repeat=X) if sum(c) == self.t]
        comps = np.array(comps, dtype=np.int64)
        ticks = sqrt_ticks(comps, self.t, self.m)
        logcoef = math.lgamma(self.t + 1) - np.array([sum(math.lgamma(c + 1) for c in row) for row in comps])
        out = []
        for p in self.probs:
            with np.errstate(divide="ignore"):
                lp = logcoef + (comps * np.log(np.asarray(p))).sum(axis=1)
            pr = np.where(np.isfinite(lp), np.exp(lp), 0.0)
            keys, inv = np.unique(ticks, axis=0, return_inverse=True)
            mass = np.bincount(inv.ravel(), weights=pr, minlength=len(keys))
            keep = mass > 0
            out.append((keys[keep], mass[keep]))
        return out


class CosetTable:
    """Conditional law of the honest types given (modular sum, colluder types)."""

    def __init__(self, source: TypeSource, params: GameParams):
        self.params = params
        H = len(params.honest)
        S = params.ring.size
        honest = [source.per_sensor[k] for k in params.honest]
        self._table: dict = {}
        for combo in itertools.product(*[range(len(v[0])) for v in honest]):
            q = np.stack([honest[i][0][j] for i, j in enumerate(combo)])
            pr = float(np.prod([honest[i][1][j] for i, j in enumerate(combo)]))
            sigma = tuple(int(v) for v in q.sum(axis=0) % S)
            self._table.setdefault(sigma, []).append((q, pr))
        # sensors are independent, so conditioning on the colluder types is a no-op
        for sigma, rows in self._table.items():
            tot = sum(p for _, p in rows)
            self._table[sigma] = (np.stack([q for q, _ in rows]),
                                  np.array([p / tot for _, p in rows]))
        self.H = H

    def candidates(self, sigma, q_L=None):
        key = tuple(int(v) for v in sigma)
        if key not in self._table:
            raise InputError(f"sum {key} has zero probability under the prior")
        return self._table[key]

    def map_estimate(self, sigma, q_L=None) -> np.ndarray:
        qs, ps = self.candidates(sigma, q_L)
        return qs[int(np.argmax(ps))].copy()

    def win_probability(self, estimate, sigma, q_L, tau: float) -> float:
        """P(estimate in N_tau(Q')) for Q' drawn from the coset law."""
        qs, ps = self.candidates(sigma, q_L)
        hits = np.array([neighborhood_contains(estimate, q, tau, self.params.ring) for q in qs])
        return float(ps[hits].sum())

    def resample(self, sigma, q_L, rng: np.random.Generator) -> np.ndarray:
        qs, ps = self.candidates(sigma, q_L)
        return qs[rng.choice(len(ps), p=ps)].copy()


@lru_cache(maxsize=16)
def _coset_table(source: TypeSource, params: GameParams) -> CosetTable:
    return CosetTable(source, params)


def neighborhood_contains(candidate, truth, tau: float, ring: RingParams) -> bool:
    """Hellinger ball of radius tau AND equal elementwise modular sums.

    ``candidate`` and ``truth`` hold quantized square-root ticks, shape
    (sensors, |X|).  The distance is ``sqrt(sum((a - b)^2) / 2)`` over all
    entries, with values in units of ``2^-m``.
    """
    a = np.asarray(candidate, dtype=np.int64)
    b = np.asarray(truth, dtype=np.int64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch {a.shape} vs {b.shape}")
    if tau < 0:
        raise ParameterError("tau must be non-negative")
    if np.any(a.sum(axis=0) % ring.size != b.sum(axis=0) % ring.size):
        return False
    d2 = float(((a - b) ** 2).sum()) / (2 * ring.scale ** 2)
    return d2 <= tau * tau


# ---------------------------------------------------------------------------
# attacker view
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class AttackerContext:
    """Everything the colluders see, and nothing else.

    ``stage`` is ``"masks"`` while the colluders choose their masks (no
    colluder masks and no reports yet) and ``"estimate"`` at the end.
    """

    stage: str
    params: GameParams
    prior: TypeSource
    honest: tuple
    colluders: tuple
    public_keys: MappingProxyType
    own_keypairs: MappingProxyType
    own_types: np.ndarray
    ciphertexts: MappingProxyType
    received_masks: np.ndarray
    own_masks: np.ndarray | None = None
    reports: np.ndarray | None = None
    own_reports: np.ndarray | None = None

    def __getattr__(self, name):
        raise ContextAccessError(f"{name!r} is not part of the attacker's view")

    @property
    def foreign_public_keys(self):
        return MappingProxyType({k: v for k, v in self.public_keys.items() if k in self.honest})

    def leaked_sum(self) -> np.ndarray:
        """Modular sum of the honest types, recoverable from the reports."""
        if self.reports is None:
            raise ContextAccessError("reports are not available before the estimate stage")
        S = self.params.ring.size
        return (self.reports.sum(axis=0) - self.own_types.sum(axis=0)) % S


def _frozen(a):
    a = np.array(a, dtype=np.int64)
    a.setflags(write=False)
    return a


def _uniform_rows(rows: int, K: int, X: int, ring: RingParams, rng, owners) -> np.ndarray:
    R = ring.uniform(rng, (rows, K, X))
    for i, k in enumerate(owners):
        R[i, k] = 0
        R[i, k] = (-R[i].sum(axis=0)) % ring.size
    return R


class TEAAttacker:
    """Default hooks follow the protocol; subclasses override ``estimate``."""

    name = "base"

    def keygen(self, foreign_public_keys, colluders, scheme: EncryptionScheme, n: int,
               rng: random.Random) -> dict:
        return {l: scheme.keygen(n, rng) for l in colluders}

    def masks(self, ctx: AttackerContext, rng: np.random.Generator) -> dict:
        p = ctx.params
        R = _uniform_rows(len(ctx.colluders), p.K, p.alphabet_size, p.ring, rng, ctx.colluders)
        return {l: R[i] for i, l in enumerate(ctx.colluders)}

    def estimate(self, ctx: AttackerContext, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


class RandomGuessTEA(TEAAttacker):
    """Draws the honest types from the prior, ignoring everything seen."""

    name = "random-guess"

    def estimate(self, ctx, rng):
        return ctx.prior.sample(rng)[list(ctx.honest)]


class SumAwareMAP(TEAAttacker):
    """Most likely honest types given the leaked sum."""

    name = "sum-aware-map"

    def estimate(self, ctx, rng):
        return _coset_table(ctx.prior, ctx.params).map_estimate(ctx.leaked_sum(), ctx.own_types)


def read_honest_types(ctx: AttackerContext) -> np.ndarray | None:
    """Try to unmask the honest reports by reading ciphertext payloads as plain integers.

    Works when the scheme leaks plaintexts; against a secure scheme it
    returns unrelated values.  Returns None when a needed ciphertext is
    missing.
    """
    p = ctx.params
    S = p.ring.size
    K, X = p.K, p.alphabet_size
    R = np.zeros((K, K, X), dtype=np.int64)
    for li, l in enumerate(ctx.colluders):
        R[l] = ctx.own_masks[li]
    for k in ctx.honest:
        for l in range(K):
            if l == k:
                continue
            for x in range(X):
                if l in ctx.colluders:
                    R[k, l, x] = ctx.received_masks[ctx.honest.index(k), ctx.colluders.index(l), x]
                    continue
                ct = ctx.ciphertexts.get((k, l, x))
                if ct is None:
                    return None
                R[k, l, x] = int.from_bytes(ct.payload, "little") % S
        R[k, k] = (-R[k].sum(axis=0)) % S
    cols = R.sum(axis=0) % S
    return (ctx.reports[list(ctx.honest)] - cols[list(ctx.honest)]) % S


class CiphertextReader(SumAwareMAP):
    """Sum-aware attacker that also tries to read the masks off the wire.

    If the read-off types fall in the leaked coset it reports them,
    otherwise it falls back to the MAP guess.
    """

    name = "sum-aware-reader"

    def estimate(self, ctx, rng):
        table = _coset_table(ctx.prior, ctx.params)
        sigma = ctx.leaked_sum()
        guess = read_honest_types(ctx)
        if guess is not None:
            qs, _ = table.candidates(sigma, ctx.own_types)
            if any(np.array_equal(guess, q) for q in qs):
                return guess
        return table.map_estimate(sigma, ctx.own_types)


TEA_SUITE = (RandomGuessTEA, SumAwareMAP, CiphertextReader)


class TDAAttacker(TEAAttacker):
    def guess(self, ctx: AttackerContext, q0, q1, rng: np.random.Generator) -> int:
        raise NotImplementedError


class RandomBitTDA(TDAAttacker):
    name = "random-bit"

    def guess(self, ctx, q0, q1, rng):
        return int(rng.integers(2))


class SumAwareTDA(TDAAttacker):
    """Picks the candidate the prior favors; the sums carry no information here."""

    name = "sum-aware"

    def guess(self, ctx, q0, q1, rng):
        w0 = prior_probability(ctx.prior, q0, ctx.honest)
        w1 = prior_probability(ctx.prior, q1, ctx.honest)
        return int(w1 > w0)


class MaskReaderTDA(TDAAttacker):
    name = "mask-reader"

    def guess(self, ctx, q0, q1, rng):
        got = read_honest_types(ctx)
        if got is not None:
            if np.array_equal(got, q0) and not np.array_equal(got, q1):
                return 0
            if np.array_equal(got, q1) and not np.array_equal(got, q0):
                return 1
        return int(rng.integers(2))


TDA_SUITE = (RandomBitTDA, SumAwareTDA, MaskReaderTDA)


# ---------------------------------------------------------------------------
# game engine
# ---------------------------------------------------------------------------


def _timed(fn, budget: float, *args):
    start = time.perf_counter()
    out = fn(*args)
    if time.perf_counter() - start > budget:
        raise BudgetExceeded(f"{getattr(fn, '__qualname__', fn)} exceeded its {budget}s budget")
    return out


def _check_keys(keys, params: GameParams, scheme: EncryptionScheme) -> dict:
    if not isinstance(keys, dict) or set(keys) != set(params.colluders):
        raise DisqualificationError("keygen must return one key pair per colluder")
    for l, kp in keys.items():
        if not isinstance(kp, KeyPair) or kp.public.scheme_tag != scheme.tag or kp.public.n != params.n:
            raise DisqualificationError(f"colluder {l} returned a key for the wrong scheme")
    return keys


def _check_masks(rows, params: GameParams) -> np.ndarray:
    ring = params.ring
    if not isinstance(rows, dict) or set(rows) != set(params.colluders):
        raise DisqualificationError("masks must return one row per colluder")
    out = []
    for l in params.colluders:
        r = np.asarray(rows[l])
        if r.shape != (params.K, params.alphabet_size) or not np.issubdtype(r.dtype, np.integer):
            raise DisqualificationError(f"colluder {l} mask row has shape {r.shape}")
        if r.min() < 0 or r.max() >= ring.size:
            raise DisqualificationError(f"colluder {l} mask row leaves the ring")
        if np.any(r.sum(axis=0) % ring.size != 0):
            raise DisqualificationError(f"colluder {l} mask row does not sum to zero")
        out.append(r.astype(np.int64))
    return np.stack(out) if out else np.zeros((0, params.K, params.alphabet_size), np.int64)


def _check_estimate(est, params: GameParams) -> np.ndarray:
    e = np.asarray(est)
    shape = (len(params.honest), params.alphabet_size)
    if e.shape != shape or not np.issubdtype(e.dtype, np.integer):
        raise DisqualificationError(f"estimate must be an integer array of shape {shape}")
    if e.min() < 0 or e.max() >= params.ring.scale:
        raise DisqualificationError("estimate is not a quantized square-root type")
    return e.astype(np.int64)


def _play(params: GameParams, source: TypeSource, attacker, q_all, crng: random.Random,
          nrng: np.random.Generator):
    """Steps 1 and 3 to 5 of either game; returns the final attacker context."""
    scheme = get_scheme(params.scheme)
    ring = params.ring
    K, X, n = params.K, params.alphabet_size, params.n
    H, Lc = params.honest, params.colluders
    budget = params.budget_s

    honest_kp = {k: scheme.keygen(n, crng) for k in H}
    foreign = MappingProxyType({k: kp.public for k, kp in honest_kp.items()})
    own_kp = _check_keys(_timed(attacker.keygen, budget, foreign, Lc, scheme, n, crng), params, scheme)
    pks = {**{k: kp.public for k, kp in honest_kp.items()}, **{l: kp.public for l, kp in own_kp.items()}}

    R_H = _uniform_rows(len(H), K, X, ring, nrng, H)
    cts = {}
    for i, k in enumerate(H):
        for l in range(K):
            if l != k:
                for x in range(X):
                    cts[(k, l, x)] = scheme.encrypt(ring.element(R_H[i, l, x]), pks[l], crng)
    received = np.zeros((len(H), len(Lc), X), dtype=np.int64)
    for i, k in enumerate(H):
        for j, l in enumerate(Lc):
            for x in range(X):
                received[i, j, x] = scheme.decrypt(cts[(k, l, x)], own_kp[l].private, ring).ticks

    q_L = _frozen(q_all[list(Lc)])
    ctx = AttackerContext("masks", params, source, H, Lc, MappingProxyType(dict(pks)),
                          MappingProxyType(dict(own_kp)), q_L, MappingProxyType(dict(cts)),
                          _frozen(received))
    R_L = _check_masks(_timed(attacker.masks, budget, ctx, nrng), params) if Lc else \
        np.zeros((0, K, X), np.int64)
    for j, l in enumerate(Lc):
        for k in range(K):
            if k != l:
                for x in range(X):
                    cts[(l, k, x)] = scheme.encrypt(ring.element(R_L[j, k, x]), pks[k], crng)

    R = np.zeros((K, K, X), dtype=np.int64)
    for i, k in enumerate(H):
        R[k] = R_H[i]
    for j, l in enumerate(Lc):
        R[l, l] = R_L[j, l]
        for k in range(K):
            if k == l:
                continue
            for x in range(X):
                try:
                    R[l, k, x] = (scheme.decrypt(cts[(l, k, x)], honest_kp[k].private, ring).ticks
                                  if k in honest_kp else R_L[j, k, x])
                except DecryptionError as exc:
                    raise DisqualificationError(f"colluder {l} sent an undecryptable mask") from exc
    G = (q_all + R.sum(axis=0)) % ring.size
    return AttackerContext("estimate", params, source, H, Lc, ctx.public_keys, ctx.own_keypairs, q_L,
                           MappingProxyType(dict(cts)), ctx.received_masks, _frozen(R_L),
                           _frozen(G), _frozen(G[list(Lc)]))


@dataclass(frozen=True)
class GameResult:
    game: str
    attacker: str
    params: GameParams
    trials: int
    wins: int
    baseline_rate: float
    seconds: float = field(default=0.0, compare=False)

    @property
    def win_rate(self) -> float:
        return self.wins / self.trials

    @property
    def band(self) -> float:
        p = self.baseline_rate
        if self.game == "tea":
            # the baseline is itself an estimate with at most binomial variance
            return 3 * math.sqrt(2 * p * (1 - p) / self.trials)
        return 3 * math.sqrt(p * (1 - p) / self.trials)

    @property
    def verdict(self) -> str:
        diff = self.win_rate - self.baseline_rate
        if abs(diff) <= self.band:
            return "within-band"
        return "above-baseline" if diff > 0 else "below-baseline"

    def to_dict(self) -> dict:
        return {"game": self.game, "attacker": self.attacker, "params": self.params.to_dict(),
                "trials": self.trials, "win_rate": self.win_rate, "baseline_rate": self.baseline_rate,
                "band": self.band, "verdict": self.verdict, "seconds": round(self.seconds, 3)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _block_rngs(seed: int, game: str, block: int):
    ss = np.random.SeedSequence(seed, spawn_key=(0 if game == "tea" else 1, block))
    nrng = np.random.default_rng(ss)
    crng = random.Random(int(ss.generate_state(2, np.uint64)[1]))
    return crng, nrng


def _shares_transcript(attacker) -> bool:
    """True when the attacker keeps the protocol's key and mask behavior."""
    return (type(attacker).keygen is TEAAttacker.keygen and type(attacker).masks is TEAAttacker.masks)


def _attacker_rngs(seed: int, game: str, block: int, count: int):
    g = 0 if game == "tea" else 1
    return [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(g, block, 1 + i)))
            for i in range(count)]


def _tea_block(args):
    params, source, attackers, seed, block, count = args
    crng, nrng = _block_rngs(seed, "tea", block)
    arngs = _attacker_rngs(seed, "tea", block, len(attackers))
    table = _coset_table(source, params)
    wins = [0] * len(attackers)
    base = [0.0] * len(attackers)
    H = list(params.honest)
    for _ in range(count):
        q = source.sample(nrng)
        # attackers in one call share the transcript; the first one drives the hooks
        ctx = _play(params, source, attackers[0], q, crng, nrng)
        for i, attacker in enumerate(attackers):
            est = _check_estimate(_timed(attacker.estimate, params.budget_s, ctx, arngs[i]), params)
            wins[i] += neighborhood_contains(est, q[H], params.tau, params.ring)
            base[i] += table.win_probability(est, ctx.leaked_sum(), ctx.own_types, params.tau)
    return wins, base


def _tda_block(args):
    params, source, attackers, q_L, q0, q1, seed, block, count = args
    crng, nrng = _block_rngs(seed, "tda", block)
    arngs = _attacker_rngs(seed, "tda", block, len(attackers))
    wins = [0] * len(attackers)
    for _ in range(count):
        b = int(nrng.integers(2))
        q = np.zeros((params.K, params.alphabet_size), dtype=np.int64)
        q[list(params.honest)] = q1 if b else q0
        q[list(params.colluders)] = q_L
        ctx = _play(params, source, attackers[0], q, crng, nrng)
        for i, attacker in enumerate(attackers):
            g = _timed(attacker.guess, params.budget_s, ctx, _frozen(q0), _frozen(q1), arngs[i])
            if type(g) not in (int, bool, np.int64) or int(g) not in (0, 1):
                raise DisqualificationError(f"guess must be 0 or 1, got {g!r}")
            wins[i] += int(g) == b
    return wins, [0.5 * count] * len(attackers)


def _run_blocks(fn, make_args, trials: int, workers: int):
    blocks = [(i, min(BLOCK, trials - i * BLOCK)) for i in range(math.ceil(trials / BLOCK))]
    jobs = [make_args(i, c) for i, c in blocks]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def _groups(attackers):
    """Attackers with default hooks play one shared game; the rest play alone."""
    shared = [a for a in attackers if _shares_transcript(a)]
    return ([shared] if shared else []) + [[a] for a in attackers if not _shares_transcript(a)]


def _run_suite(game, fn, make_args, params, attackers, trials, workers):
    if trials < 1:
        raise ParameterError("trials must be at least 1")
    attackers = list(attackers)
    if not attackers:
        raise ParameterError("no attackers given")
    out = {}
    for group in _groups(attackers):
        start = time.perf_counter()
        parts = _run_blocks(fn, lambda i, c: make_args(tuple(group), i, c), trials, workers)
        secs = (time.perf_counter() - start) / len(group)
        for j, a in enumerate(group):
            wins = sum(p[0][j] for p in parts)
            base = sum(p[1][j] for p in parts) / trials
            out[id(a)] = GameResult(game, a.name, params, trials, wins, base, secs)
    return [out[id(a)] for a in attackers]


TABLE_LIMIT = 2 * 10**6


def _check_table_size(params: GameParams) -> None:
    comps = math.comb(params.t + params.alphabet_size - 1, params.alphabet_size - 1)
    size = comps ** len(params.honest)
    if size > TABLE_LIMIT:
        raise CapabilityError(
            f"the exact coset baseline would enumerate {size:.3g} honest type collections "
            f"(limit {TABLE_LIMIT:.0e}); reduce t, |X| or K - L")


def _check_source(source, params):
    _check_table_size(params)
    source = source or TypeSource.default(params)
    if source.K != params.K or source.t != params.t or source.m != params.m:
        raise ParameterError("type source does not match the game parameters")
    return source


def run_tea_suite(params: GameParams, attackers, trials: int, seed: int = 0,
                  source: TypeSource | None = None, workers: int = 1) -> list:
    """Type estimation game; baseline is the coset-resampled independent guesser."""
    source = _check_source(source, params)
    return _run_suite("tea", _tea_block, lambda g, i, c: (params, source, g, seed, i, c),
                      params, attackers, trials, workers)


def run_tea(params: GameParams, attacker: TEAAttacker, trials: int, seed: int = 0,
            source: TypeSource | None = None, workers: int = 1) -> GameResult:
    return run_tea_suite(params, [attacker], trials, seed, source, workers)[0]


def _check_triple(params: GameParams, q_L, q0, q1):
    H, X = len(params.honest), params.alphabet_size
    q_L = np.asarray(q_L, dtype=np.int64).reshape(len(params.colluders), X)
    q0 = np.asarray(q0, dtype=np.int64)
    q1 = np.asarray(q1, dtype=np.int64)
    for q in (q0, q1):
        if q.shape != (H, X):
            raise InputError(f"honest types must have shape {(H, X)}")
    for q in (q_L, q0, q1):
        if q.size and (q.min() < 0 or q.max() >= params.ring.scale):
            raise InputError("types must be quantized square-root ticks")
    S = params.ring.size
    if np.any(q0.sum(axis=0) % S != q1.sum(axis=0) % S):
        raise InputError("the two honest type collections must have equal modular sums")
    return q_L, q0, q1


def run_tda_suite(params: GameParams, attackers, q_L, q0, q1, trials: int, seed: int = 0,
                  source: TypeSource | None = None, workers: int = 1) -> list:
    """Type discrimination game; the baseline is a fair coin."""
    q_L, q0, q1 = _check_triple(params, q_L, q0, q1)
    source = _check_source(source, params)
    return _run_suite("tda", _tda_block, lambda g, i, c: (params, source, g, q_L, q0, q1, seed, i, c),
                      params, attackers, trials, workers)


def run_tda(params: GameParams, attacker: TDAAttacker, q_L, q0, q1, trials: int, seed: int = 0,
            source: TypeSource | None = None, workers: int = 1) -> GameResult:
    return run_tda_suite(params, [attacker], q_L, q0, q1, trials, seed, source, workers)[0]


def prior_probability(source: TypeSource, q, sensors) -> float:
    """Prior mass of the tick rows ``q`` at the given sensors."""
    out = 1.0
    for row, k in zip(np.asarray(q), sensors):
        keys, mass = source.per_sensor[k]
        hit = np.flatnonzero(np.all(keys == row, axis=1))
        out *= float(mass[hit[0]]) if hit.size else 0.0
    return out


def default_tda_triple(params: GameParams, source: TypeSource | None = None):
    """Colluder types and two distinct honest collections with equal sums.

    Each honest sensor gets its most likely type; the second collection
    swaps the first two honest rows, so the sums agree.  When every honest
    sensor shares one type the pair coincides.
    """
    source = source or TypeSource.default(params)
    mode = [source.per_sensor[k][0][int(np.argmax(source.per_sensor[k][1]))] for k in range(params.K)]
    q_L = np.array([mode[l] for l in params.colluders], dtype=np.int64).reshape(-1, params.alphabet_size)
    q0 = np.array([mode[h] for h in params.honest], dtype=np.int64)
    if len(params.honest) >= 2 and np.array_equal(q0[0], q0[1]):
        # fall back to the two most likely types of the first honest sensor
        keys, mass = source.per_sensor[params.honest[0]]
        order = np.argsort(-mass)
        if len(order) > 1:
            q0[0] = keys[order[1]]
    q1 = q0.copy()
    if len(params.honest) >= 2:
        q1[[0, 1]] = q0[[1, 0]]
    return q_L, q0, q1


# ---------------------------------------------------------------------------
# mask uniformity
# ---------------------------------------------------------------------------


EXACT_LIMIT = 2_000_000


@dataclass(frozen=True)
class UniformityVerdict:
    mode: str
    K: int
    L: int
    m: int
    alphabet_size: int
    N: int
    expected_mass: float
    matches_law: bool
    uniform: bool
    point_mass: bool
    coset_violations: int
    p_value: float | None = None
    samples: int | None = None
    notice: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _mask_sums(digits: np.ndarray, K: int, L: int, X: int, S: int):
    """Map free mask entries to (column sums over I at honest sensors, masks I -> colluders)."""
    H = K - L
    I = list(range(min(2, H)))
    n = digits.shape[0]
    R = np.zeros((n, len(I), K, X), dtype=np.int64)
    pos = 0
    for i, k in enumerate(I):
        for l in range(K):
            if l == k:
                continue
            R[:, i, l, :] = digits[:, pos:pos + X]
            pos += X
        R[:, i, k, :] = (-R[:, i].sum(axis=1)) % S
    sigma = R[:, :, :H, :].sum(axis=1) % S          # (n, H, X)
    r_IL = R[:, :, H:, :]                            # (n, |I|, L, X)
    return sigma, r_IL


def check_mask_uniformity(K: int, L: int, m: int, alphabet_size: int, mode: str = "auto",
                          N: int = 1, samples: int = 10**6, seed: int = 0) -> UniformityVerdict:
    """Conditional law of the honest column sums given the masks sent to colluders.

    With ``H = K - L`` honest sensors and rows from the first two of them,
    the sums should be uniform over the coset where the total of all sums
    plus the colluder-bound masks is zero, each point carrying mass
    ``S^-((H-1)|X|)`` where ``S = N 2^m`` is the ring size (``2^-m(K-L-1)|X|``
    for ``N = 1``).  With one honest sensor the law is a point mass.
    """
    if not 0 <= L < K or K < 2:
        raise ParameterError("need K >= 2 and 0 <= L < K")
    ring = RingParams(N, m)
    S, X, H = ring.size, alphabet_size, K - L
    free = min(2, H) * (K - 1) * X
    dof = (H - 1) * X
    mass = float(S) ** -dof
    notice = None
    if mode not in ("auto", "exact", "statistical"):
        raise ParameterError("mode must be auto, exact or statistical")
    if mode in ("auto", "exact") and S ** free > EXACT_LIMIT:
        notice = f"{S}^{free} mask draws is too many to enumerate; using Monte Carlo"
        if mode == "exact":
            warnings.warn(notice, stacklevel=2)
        mode = "statistical"
    elif mode == "auto":
        mode = "exact"

    base = dict(K=K, L=L, m=m, alphabet_size=X, N=N, expected_mass=mass)
    if mode == "exact":
        codes = np.arange(S ** free, dtype=np.int64)
        digits = (codes[:, None] // (S ** np.arange(free, dtype=np.int64))) % S
        sigma, r = _mask_sums(digits, K, L, X, S)
        on = (sigma.sum(axis=1) + r.sum(axis=(1, 2))) % S
        violations = int(np.count_nonzero(np.any(on != 0, axis=1)))
        rkey = (r.reshape(len(codes), -1) * (S ** np.arange(r[0].size, dtype=np.int64))).sum(axis=1)
        skey = (sigma.reshape(len(codes), -1) * (S ** np.arange(sigma[0].size, dtype=np.int64))).sum(axis=1)
        pair, counts = np.unique(rkey * S ** sigma[0].size + skey, return_counts=True)
        r_of_pair = pair // S ** sigma[0].size
        r_vals, r_counts = np.unique(rkey, return_counts=True)
        per_r = dict(zip(r_vals.tolist(), r_counts.tolist()))
        cond = counts / np.array([per_r[v] for v in r_of_pair.tolist()])
        support = np.unique(r_of_pair, return_counts=True)[1]
        matches = (violations == 0 and np.allclose(cond, mass, rtol=0, atol=1e-15)
                   and np.all(support == S ** dof))
        return UniformityVerdict("exact", **base, matches_law=bool(matches),
                                 uniform=bool(matches and dof > 0), point_mass=dof == 0,
                                 coset_violations=violations, notice=notice)

    rng = np.random.default_rng(seed)
    digits = rng.integers(0, S, size=(samples, free))
    sigma, r = _mask_sums(digits, K, L, X, S)
    on = (sigma.sum(axis=1) + r.sum(axis=(1, 2))) % S
    violations = int(np.count_nonzero(np.any(on != 0, axis=1)))
    if dof == 0:
        # the single honest sum is fixed by the colluder-bound masks
        return UniformityVerdict("statistical", **base, matches_law=violations == 0, uniform=False,
                                 point_mass=True, coset_violations=violations, samples=samples,
                                 notice=notice)
    # chi-square over (free honest sums, colluder-bound mask sums), keeping
    # at least five expected draws per cell; a coordinate that would
    # overflow that is reduced modulo a divisor of S, which preserves
    # uniformity
    rsum = r.sum(axis=(1, 2)) % S
    coords = [sigma[:, h, x] for h in range(H - 1) for x in range(X)] + [rsum[:, x] for x in range(X)]
    target = max(samples // 5, 2)
    cell = np.zeros(samples, dtype=np.int64)
    cells = 1
    for c in coords:
        d = S if cells * S <= target else max(
            (v for v in range(2, S + 1) if S % v == 0 and cells * v <= target), default=1)
        if d == 1:
            break
        cell = cell * d + c % d
        cells *= d
        if d < S:
            break
    obs = np.bincount(cell, minlength=cells)
    p = float(stats.chisquare(obs).pvalue)
    ok = violations == 0 and p > 0.01
    return UniformityVerdict("statistical", **base, matches_law=ok, uniform=ok, point_mass=False,
                             coset_violations=violations, p_value=p, samples=samples, notice=notice)
