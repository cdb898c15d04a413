"""Three-phase privacy-preserving detection protocol.

Phase 1: every sensor broadcasts a fresh public key.
Phase 2: sensor k draws uniform masks R[k, l, x] for l != k, sets
R[k, k, x] so that its row sums to zero, and sends each R[k, l, x]
encrypted under sensor l's key.  After the phase barrier every sensor
decrypts what it received and keeps the column sum S_k(x) = sum_l R[l, k, x].
Phase 3: sensor k reports G_k(x) = Q_k(x) + S_k(x).  The masks cancel in
sum_k G_k(x), so the fusion center recovers sum_k Q_k(x) exactly.

All additions are in the ring.  Every message goes over a public
broadcast bus and is appended to a transcript.

Wire format (little-endian), 16-byte header then payload::

    offset size field
    0      2    magic b"ZM"
    2      1    version (1)
    3      1    phase (1, 2, 3)
    4      1    kind (1 key announce, 2 mask ciphertext, 3 report)
    5      2    K
    7      2    N
    9      1    m
    10     2    |X|
    12     2    sender
    14     2    receiver (0xFFFF = broadcast)

    kind 1 payload: public key encoding (tag u8, n u16, big-endian value)
    kind 2 payload: x (u16) followed by the ciphertext encoding
    kind 3 payload: |X| ring elements, each ``byte_width`` bytes
"""

from __future__ import annotations

import enum
import json
import logging
import random
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .crypto import Ciphertext, EncryptionScheme, KeyPair, PublicKey, get_scheme
from .errors import (
    DecryptionError, IncompleteRoundError, InputError, ParameterError, ProtocolAbort,
    ProtocolError, StateError,
)
from .ring import RingParams
from .typestat import Alphabet, EmpiricalType, compute_type, quantize_sqrt

log = logging.getLogger(__name__)

MAGIC = b"ZM"
VERSION = 1
BROADCAST = 0xFFFF
HEADER = struct.Struct("<2sBBBHHBHHH")
assert HEADER.size == 16


class Kind(enum.IntEnum):
    PUBLIC_KEY = 1
    MASK_CIPHERTEXT = 2
    REPORT = 3


_PHASE_OF = {Kind.PUBLIC_KEY: 1, Kind.MASK_CIPHERTEXT: 2, Kind.REPORT: 3}


@dataclass(frozen=True)
class ProtocolConfig:
    """Parameters every entity agrees on before the protocol starts."""

    K: int
    alphabet_size: int
    ring: RingParams
    scheme: str = "elgamal"
    security_n: int = 2048

    def __post_init__(self):
        if self.K < 2:
            raise ParameterError("the protocol needs at least two sensors")
        if self.alphabet_size < 1:
            raise ParameterError("alphabet size must be positive")
        if self.K >= BROADCAST or self.alphabet_size > 0xFFFF:
            raise ParameterError("K or |X| too large for the wire header")
        if self.ring.modulus_N > 0xFFFF or self.ring.frac_bits_m > 0xFF:
            raise ParameterError("ring parameters too large for the wire header")
        self.ring.check_network(self.K)
        get_scheme(self.scheme)

    @classmethod
    def default(cls, K, alphabet_size, m=13, **kw):
        return cls(K, alphabet_size, RingParams(K + 1, m), **kw)

    @property
    def scheme_obj(self) -> EncryptionScheme:
        return get_scheme(self.scheme)

    def band(self) -> float:
        """Bound on |d(Q~) - d~(G)|, i.e. 2^-m K^2 |X|."""
        return self.K ** 2 * self.alphabet_size / self.ring.scale


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaskMatrix:
    """``ticks[k, l, x]`` is R_{k,l}(x); row k is held by sensor k."""

    ticks: np.ndarray
    params: RingParams

    @classmethod
    def generate(cls, K: int, alphabet_size: int, params: RingParams, rng) -> "MaskMatrix":
        """Uniform off-diagonal entries, diagonal set so each row sums to zero."""
        return cls(generate_masks(1, K, alphabet_size, params, rng)[0], params)

    @classmethod
    def zeros(cls, K, alphabet_size, params):
        return cls(np.zeros((K, K, alphabet_size), dtype=np.int64), params)

    def row(self, k: int) -> np.ndarray:
        return self.ticks[k]

    def column_sums(self) -> np.ndarray:
        """(K, |X|) array with entry [l, x] = sum_k R_{k,l}(x)."""
        return self.params.sum(self.ticks, axis=0)

    def validate(self) -> None:
        rows = self.params.sum(self.ticks, axis=1)
        if np.any(rows != 0):
            raise ParameterError("a mask row does not sum to zero")


def generate_masks(trials: int, K: int, alphabet_size: int, params: RingParams, rng) -> np.ndarray:
    """Batch of mask matrices with shape (trials, K, K, |X|).

    ``rng`` is a numpy Generator or a ``random.Random``.
    """
    shape = (trials, K, K, alphabet_size)
    if isinstance(rng, np.random.Generator):
        R = params.uniform(rng, shape)
    else:
        R = np.array([rng.randrange(params.size) for _ in range(int(np.prod(shape)))],
                     dtype=np.int64).reshape(shape)
    idx = np.arange(K)
    R[:, idx, idx, :] = 0
    R[:, idx, idx, :] = params.neg(params.sum(R, axis=2))
    return R


def obfuscate(q_ticks: np.ndarray, masks: np.ndarray, params: RingParams) -> np.ndarray:
    """G = Q + column sums of the masks.  Shapes (..., K, X) and (..., K, K, X)."""
    return params.add(q_ticks, params.sum(masks, axis=-3))


# ---------------------------------------------------------------------------
# messages and wire format
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Header:
    phase: int
    kind: int
    K: int
    N: int
    m: int
    alphabet_size: int
    sender: int
    receiver: int = BROADCAST
    version: int = VERSION

    def pack(self) -> bytes:
        return HEADER.pack(MAGIC, self.version, self.phase, self.kind, self.K, self.N, self.m,
                           self.alphabet_size, self.sender, self.receiver)

    @classmethod
    def unpack(cls, data: bytes) -> "Header":
        if len(data) < HEADER.size:
            raise ProtocolError("message shorter than the 16-byte header")
        magic, ver, phase, kind, K, N, m, X, snd, rcv = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ProtocolError(f"bad magic {magic!r}")
        if ver != VERSION:
            raise ProtocolError(f"unsupported wire version {ver}")
        return cls(phase, kind, K, N, m, X, snd, rcv, ver)

    def matches(self, cfg: ProtocolConfig) -> bool:
        return (self.K, self.N, self.m, self.alphabet_size) == (
            cfg.K, cfg.ring.modulus_N, cfg.ring.frac_bits_m, cfg.alphabet_size)


@dataclass(frozen=True)
class PublicKeyAnnounce:
    sender: int
    public_key: PublicKey
    kind = Kind.PUBLIC_KEY
    receiver = BROADCAST


@dataclass(frozen=True)
class MaskCiphertext:
    sender: int
    receiver: int
    x: int
    ciphertext: Ciphertext
    kind = Kind.MASK_CIPHERTEXT


@dataclass(frozen=True)
class ObfuscatedReport:
    sender: int
    values: tuple
    kind = Kind.REPORT
    receiver = BROADCAST


ProtocolMessage = PublicKeyAnnounce | MaskCiphertext | ObfuscatedReport


def encode_message(msg, cfg: ProtocolConfig) -> bytes:
    hdr = Header(_PHASE_OF[msg.kind], int(msg.kind), cfg.K, cfg.ring.modulus_N,
                 cfg.ring.frac_bits_m, cfg.alphabet_size, msg.sender, msg.receiver)
    if msg.kind == Kind.PUBLIC_KEY:
        body = msg.public_key.to_bytes()
    elif msg.kind == Kind.MASK_CIPHERTEXT:
        body = struct.pack("<H", msg.x) + msg.ciphertext.to_bytes()
    else:
        body = b"".join(cfg.ring.encode(v) for v in msg.values)
    return hdr.pack() + body


def decode_message(data: bytes, cfg: ProtocolConfig | None = None):
    """Parse wire bytes; with ``cfg`` the header must match it."""
    hdr = Header.unpack(data)
    if cfg is not None and not hdr.matches(cfg):
        raise ProtocolError("header does not match the agreed parameters",
                            phase=hdr.phase, sensor=hdr.sender)
    body = bytes(data[HEADER.size:])
    try:
        kind = Kind(hdr.kind)
    except ValueError:
        raise ProtocolError(f"unknown message kind {hdr.kind}", phase=hdr.phase, sensor=hdr.sender)
    if hdr.phase != _PHASE_OF[kind]:
        raise ProtocolError(f"kind {kind.name} in phase {hdr.phase}", sensor=hdr.sender)
    try:
        if kind == Kind.PUBLIC_KEY:
            msg = PublicKeyAnnounce(hdr.sender, PublicKey.from_bytes(body))
        elif kind == Kind.MASK_CIPHERTEXT:
            if len(body) < 2:
                raise DecryptionError("truncated mask ciphertext")
            (x,) = struct.unpack_from("<H", body)
            msg = MaskCiphertext(hdr.sender, hdr.receiver, x, Ciphertext.from_bytes(body[2:]))
        else:
            ring = RingParams(hdr.N, hdr.m)
            w = ring.byte_width
            if len(body) != w * hdr.alphabet_size:
                raise ProtocolError("report length does not match |X|", phase=3, sensor=hdr.sender)
            msg = ObfuscatedReport(hdr.sender, tuple(ring.decode(body[i:i + w])
                                                     for i in range(0, len(body), w)))
    except (DecryptionError, ParameterError) as exc:
        raise ProtocolAbort(f"malformed message: {exc}", phase=hdr.phase, sensor=hdr.sender) from exc
    return hdr, msg


# ---------------------------------------------------------------------------
# engines
# ---------------------------------------------------------------------------


class SensorState(enum.Enum):
    INIT = "init"
    MEASURED = "measured"
    ANNOUNCED = "announced"
    EXCHANGED = "exchanged"
    REPORTED = "reported"


class SensorEngine:
    """Single sensor.  Holds its key pair, its mask row and its type."""

    def __init__(self, k: int, config: ProtocolConfig, rng: random.Random | None = None,
                 zero_masks: bool = False):
        if not 0 <= k < config.K:
            raise ParameterError(f"sensor id {k} outside 0..{config.K - 1}")
        self.k = k
        self.config = config
        self.rng = rng or random.Random()
        self.zero_masks = zero_masks
        self.state = SensorState.INIT
        self.etype: EmpiricalType | None = None
        self.q_ticks: np.ndarray | None = None
        self._keypair: KeyPair | None = None
        self.foreign_keys: dict[int, PublicKey] = {}
        self._mask_row: np.ndarray | None = None
        self._inbox: dict[tuple[int, int], Ciphertext] = {}
        self.mask_sum: np.ndarray | None = None

    def __repr__(self):
        return f"SensorEngine(k={self.k}, state={self.state.value})"

    def _require(self, *states):
        if self.state not in states:
            raise StateError(f"sensor {self.k} is {self.state.value}, expected "
                             f"{' or '.join(s.value for s in states)}")

    def load_measurements(self, sequence) -> None:
        self._require(SensorState.INIT)
        self.load_type(compute_type(sequence, Alphabet(self.config.alphabet_size)))

    def load_type(self, etype: EmpiricalType) -> None:
        self._require(SensorState.INIT)
        if len(etype.counts) != self.config.alphabet_size:
            raise InputError(f"type has {len(etype.counts)} symbols, expected {self.config.alphabet_size}")
        self.etype = etype
        self.state = SensorState.MEASURED

    def phase1_announce(self) -> PublicKeyAnnounce:
        self._require(SensorState.MEASURED)
        cfg = self.config
        self._keypair = cfg.scheme_obj.keygen(cfg.security_n, self.rng)
        self.q_ticks = np.asarray(quantize_sqrt(self.etype, cfg.ring).ticks, dtype=np.int64)
        self.state = SensorState.ANNOUNCED
        return PublicKeyAnnounce(self.k, self._keypair.public)

    def receive_public_key(self, msg: PublicKeyAnnounce) -> None:
        if msg.sender == self.k:
            return
        if msg.sender in self.foreign_keys:
            raise ProtocolAbort("duplicate public key", phase=1, sensor=msg.sender)
        if msg.public_key.scheme_tag != self.config.scheme_obj.tag:
            raise ProtocolAbort("public key for the wrong scheme", phase=1, sensor=msg.sender)
        self.foreign_keys[msg.sender] = msg.public_key

    def phase2_exchange(self) -> list[MaskCiphertext]:
        self._require(SensorState.ANNOUNCED)
        cfg = self.config
        missing = sorted(set(range(cfg.K)) - {self.k} - set(self.foreign_keys))
        if missing:
            raise IncompleteRoundError(f"sensor {self.k} lacks public keys of {missing}", phase=1)
        if self.zero_masks:
            row = np.zeros((cfg.K, cfg.alphabet_size), dtype=np.int64)
        else:
            row = generate_masks(1, cfg.K, cfg.alphabet_size, cfg.ring, self.rng)[0, self.k]
        self._mask_row = row
        scheme = cfg.scheme_obj
        out = []
        for l in range(cfg.K):
            if l == self.k:
                continue
            for x in range(cfg.alphabet_size):
                ct = scheme.encrypt(cfg.ring.element(row[l, x]), self.foreign_keys[l], self.rng)
                out.append(MaskCiphertext(self.k, l, x, ct))
        return out

    def receive_ciphertext(self, msg: MaskCiphertext) -> None:
        if msg.receiver != self.k:
            return
        if self.state not in (SensorState.ANNOUNCED,):
            raise StateError(f"sensor {self.k} got a mask ciphertext while {self.state.value}")
        if not 0 <= msg.x < self.config.alphabet_size or not 0 <= msg.sender < self.config.K:
            raise ProtocolAbort("mask ciphertext index out of range", phase=2, sensor=msg.sender)
        key = (msg.sender, msg.x)
        if key in self._inbox:
            raise ProtocolAbort("duplicate mask ciphertext", phase=2, sensor=msg.sender)
        self._inbox[key] = msg.ciphertext

    def finish_exchange(self) -> None:
        """Phase-2 barrier: decrypt everything received and store the mask sums."""
        self._require(SensorState.ANNOUNCED)
        cfg = self.config
        if self._mask_row is None:
            raise StateError(f"sensor {self.k} has not sent its masks")
        expected = {(l, x) for l in range(cfg.K) if l != self.k for x in range(cfg.alphabet_size)}
        missing = sorted(expected - set(self._inbox))
        if missing:
            raise IncompleteRoundError(
                f"sensor {self.k} missing {len(missing)} mask ciphertexts, first from sensor "
                f"{missing[0][0]}", phase=2, sensor=missing[0][0])
        scheme = cfg.scheme_obj
        total = self._mask_row[self.k].copy()
        for (l, x), ct in sorted(self._inbox.items()):
            try:
                r = scheme.decrypt(ct, self._keypair.private, cfg.ring)
            except (DecryptionError, ParameterError) as exc:
                raise ProtocolAbort(f"ciphertext does not decrypt: {exc}", phase=2, sensor=l) from exc
            total[x] = (total[x] + r.ticks) % cfg.ring.size
        self.mask_sum = total
        self._inbox.clear()
        self.state = SensorState.EXCHANGED

    def phase3_report(self) -> ObfuscatedReport:
        self._require(SensorState.EXCHANGED)
        g = self.config.ring.add(self.q_ticks, self.mask_sum)
        self.state = SensorState.REPORTED
        return ObfuscatedReport(self.k, tuple(int(v) for v in g))

    # read-only views for colluding-attacker bundles
    @property
    def keypair(self) -> KeyPair | None:
        return self._keypair

    @property
    def mask_row(self) -> np.ndarray | None:
        return None if self._mask_row is None else self._mask_row.copy()


class FusionEngine:
    def __init__(self, config: ProtocolConfig, threshold: float):
        if threshold < 0:
            raise ParameterError("threshold must be non-negative")
        self.config = config
        self.threshold = threshold
        self.reports: dict[int, ObfuscatedReport] = {}

    def receive_report(self, msg: ObfuscatedReport) -> None:
        if msg.sender in self.reports:
            raise ProtocolAbort("duplicate report", phase=3, sensor=msg.sender)
        self.reports[msg.sender] = msg

    def statistic_exact(self) -> Fraction:
        return fusion_statistic_exact(list(self.reports.values()), self.config)

    def decide(self) -> int:
        return int(self.statistic_exact() >= Fraction(self.threshold))


def _report_matrix(reports: Sequence[ObfuscatedReport], cfg: ProtocolConfig) -> np.ndarray:
    if len(reports) != cfg.K:
        raise ProtocolError(f"expected {cfg.K} reports, got {len(reports)}", phase=3)
    senders = sorted(r.sender for r in reports)
    if senders != list(range(cfg.K)):
        raise ProtocolError(f"report senders {senders} are not 0..{cfg.K - 1}", phase=3)
    for r in reports:
        if len(r.values) != cfg.alphabet_size:
            raise ProtocolError("report has the wrong number of symbols", phase=3, sensor=r.sender)
        if any(not 0 <= v < cfg.ring.size for v in r.values):
            raise ProtocolError("report value outside the ring", phase=3, sensor=r.sender)
    return np.array([r.values for r in sorted(reports, key=lambda r: r.sender)], dtype=np.int64)


def statistic_numerator(g_ticks: np.ndarray, K: int, params: RingParams) -> np.ndarray:
    """Integer ``4^m * d~`` for reports of shape (..., K, X)."""
    s = params.sum(g_ticks, axis=-2)
    return K * K * params.scale * params.scale - (s * s).sum(axis=-1)


def fusion_statistic_exact(reports: Sequence[ObfuscatedReport], cfg: ProtocolConfig) -> Fraction:
    G = _report_matrix(reports, cfg)
    num = int(statistic_numerator(G, cfg.K, cfg.ring))
    return Fraction(num, cfg.ring.scale ** 2)


def fusion_statistic(reports: Sequence[ObfuscatedReport], cfg: ProtocolConfig) -> float:
    """d~(G) = K^2 - sum_x (sum_k G_k(x))^2 with the inner sum taken in the ring."""
    return float(fusion_statistic_exact(reports, cfg))


# ---------------------------------------------------------------------------
# transport and transcript
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TranscriptEntry:
    seq: int
    kind: int
    phase: int
    sender: int
    receiver: int
    wire: bytes

    def to_json(self) -> str:
        return json.dumps({"seq": self.seq, "kind": self.kind, "phase": self.phase,
                           "sender": self.sender, "receiver": self.receiver,
                           "wire": self.wire.hex()}, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TranscriptEntry":
        d = json.loads(line)
        return cls(d["seq"], d["kind"], d["phase"], d["sender"], d["receiver"], bytes.fromhex(d["wire"]))


@dataclass
class Transcript:
    entries: list = field(default_factory=list)

    def append(self, entry: TranscriptEntry) -> None:
        self.entries.append(entry)

    def __len__(self):
        return len(self.entries)

    def of_kind(self, kind) -> list:
        return [e for e in self.entries if e.kind == int(kind)]

    def messages(self, cfg: ProtocolConfig | None = None) -> list:
        return [decode_message(e.wire, cfg)[1] for e in self.entries]

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.entries)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def read(cls, path) -> "Transcript":
        with open(path) as fh:
            return cls([TranscriptEntry.from_json(ln) for ln in fh if ln.strip()])


class BroadcastBus:
    """Public channel.  Messages are serialized, logged, parsed back and
    handed to every subscriber in subscription order.

    ``interceptor(entry_seq, wire) -> wire`` can rewrite bytes in flight,
    which tests use to tamper with ciphertexts.
    """

    def __init__(self, config: ProtocolConfig, interceptor: Callable | None = None,
                 drop: Callable | None = None):
        self.config = config
        self.transcript = Transcript()
        self.subscribers: list[Callable] = []
        self.interceptor = interceptor
        self.drop = drop

    def subscribe(self, handler: Callable) -> None:
        self.subscribers.append(handler)

    def publish(self, msg) -> None:
        wire = encode_message(msg, self.config)
        seq = len(self.transcript)
        if self.interceptor is not None:
            wire = self.interceptor(seq, wire)
        if self.drop is not None and self.drop(seq, msg):
            log.debug("message %d dropped", seq)
            return
        hdr, parsed = decode_message(wire, self.config)
        self.transcript.append(TranscriptEntry(seq, hdr.kind, hdr.phase, hdr.sender, hdr.receiver, wire))
        for handler in self.subscribers:
            handler(parsed)


def _sensor_handler(engine: SensorEngine):
    def handle(msg):
        if isinstance(msg, PublicKeyAnnounce):
            engine.receive_public_key(msg)
        elif isinstance(msg, MaskCiphertext):
            engine.receive_ciphertext(msg)
    return handle


def _fusion_handler(engine: FusionEngine):
    def handle(msg):
        if isinstance(msg, ObfuscatedReport):
            engine.receive_report(msg)
    return handle


@dataclass(frozen=True)
class ProtocolResult:
    decision: int
    statistic: float
    statistic_exact: Fraction
    transcript: Transcript
    reports: tuple


def run_protocol(sensors: Sequence[SensorEngine], fusion: FusionEngine,
                 bus: BroadcastBus | None = None) -> ProtocolResult:
    """Drive all three phases over the bus and return the fusion decision.

    Sensors act in ascending id order within each phase.
    """
    cfg = fusion.config
    if len(sensors) != cfg.K or [s.k for s in sensors] != list(range(cfg.K)):
        raise ParameterError("need sensors 0..K-1 in order")
    if any(s.config != cfg for s in sensors):
        raise ParameterError("sensors and fusion center disagree on parameters")
    bus = bus or BroadcastBus(cfg)
    for s in sensors:
        bus.subscribe(_sensor_handler(s))
    bus.subscribe(_fusion_handler(fusion))

    for s in sensors:
        bus.publish(s.phase1_announce())
    for s in sensors:
        for msg in s.phase2_exchange():
            bus.publish(msg)
    for s in sensors:
        s.finish_exchange()
    for s in sensors:
        bus.publish(s.phase3_report())

    stat = fusion.statistic_exact()
    return ProtocolResult(int(stat >= Fraction(fusion.threshold)), float(stat), stat, bus.transcript,
                          tuple(fusion.reports[k] for k in range(cfg.K)))


def build_network(config: ProtocolConfig, types: Sequence[EmpiricalType], threshold: float,
                  seed: int | None = None, zero_masks: bool = False):
    """Sensors loaded with ``types`` plus a fusion center; seeded per sensor."""
    if len(types) != config.K:
        raise ParameterError(f"need {config.K} types, got {len(types)}")
    seeds = np.random.SeedSequence(seed).generate_state(config.K, dtype=np.uint64)
    sensors = []
    for k, et in enumerate(types):
        s = SensorEngine(k, config, random.Random(int(seeds[k])), zero_masks=zero_masks)
        s.load_type(et)
        sensors.append(s)
    return sensors, FusionEngine(config, threshold)


def run_on_types(config: ProtocolConfig, types: Sequence[EmpiricalType], threshold: float,
                 seed: int | None = None, **kw) -> ProtocolResult:
    sensors, fusion = build_network(config, types, threshold, seed, **kw)
    return run_protocol(sensors, fusion)
