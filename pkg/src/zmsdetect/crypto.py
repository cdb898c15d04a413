"""Public-key encryption of ring elements and a chosen-plaintext game.

Three schemes share one interface:

* ``ElGamalScheme``: ElGamal in the quadratic-residue subgroup of a safe
  prime ``p = 2q + 1`` with generator 4.  The security parameter ``n`` is
  the bit length of ``p``.
* ``IdentityScheme``: the ciphertext is the plaintext.  Harness sanity only.
* ``FixedPadScheme``: a deterministic additive pad derived from the key.
  It decrypts correctly but maps equal plaintexts to equal ciphertexts,
  which the CPA game catches.

Randomness comes from a ``random.Random``-style object (``randrange``,
``getrandbits``).  Pass a seeded ``random.Random`` for reproducible runs;
the default is ``secrets.SystemRandom``.
"""

from __future__ import annotations

import secrets
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping

try:  # GMP modular exponentiation is several times faster than pow()
    import gmpy2

    def _powmod(b: int, e: int, m: int) -> int:
        return int(gmpy2.powmod(b, e, m))
except ImportError:  # pragma: no cover
    _powmod = pow

from .errors import DecryptionError, HarnessError, ParameterError
from .ring import RingElement, RingParams

# Safe primes p (with (p-1)/2 prime) keyed by bit length.  The small ones
# are the first safe primes above 3 * 2**(n-2); 1536, 2048 and 3072 are the
# RFC 3526 MODP primes.
SAFE_PRIMES = {
    64: int(
        "C000000000000683",
        16),
    128: int(
        "C0000000000000000000000000000EAB",
        16),
    256: int(
        "C00000000000000000000000000000000000000000000000000000000000A0EB",
        16),
    512: int(
        "C000000000000000000000000000000000000000000000000000000000000000"
        "000000000000000000000000000000000000000000000000000000000000854F",
        16),
    1536: int(
        "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
        "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
        "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
        "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
        "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
        "9ED529077096966D670C354E4ABC9804F1746C08CA237327FFFFFFFFFFFFFFFF",
        16),
    2048: int(
        "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
        "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
        "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
        "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
        "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
        "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
        "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
        "3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF",
        16),
    3072: int(
        "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
        "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
        "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
        "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
        "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
        "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
        "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
        "3995497CEA956AE515D2261898FA051015728E5A8AAAC42DAD33170D04507A33"
        "A85521ABDF1CBA64ECFB850458DBEF0A8AEA71575D060C7DB3970F85A6E1E4C7"
        "ABF5AE8CDB0933D71E8C94E04A25619DCEE3D2261AD2EE6BF12FFA06D98A0864"
        "D87602733EC86A64521F2B18177B200CBBE117577A615D6C770988C0BAD946E2"
        "08E24FA074E5AB3143DB5BFCE0FD108E4B82D120A93AD2CAFFFFFFFFFFFFFFFF",
        16),
}

GENERATOR = 4
_PAD_MUL = 0x9E3779B97F4A7C15
_PAD_INV = pow(_PAD_MUL, -1, 2**64)


def _default_rng():
    return secrets.SystemRandom()


def _key_width(tag: int, n: int) -> int:
    if tag == ElGamalScheme.tag:
        if n not in SAFE_PRIMES:
            raise ParameterError(f"unsupported ElGamal security parameter {n}")
        return (n + 7) // 8
    return 8


@dataclass(frozen=True)
class PublicKey:
    scheme_tag: int
    n: int
    value: int

    def to_bytes(self) -> bytes:
        width = _key_width(self.scheme_tag, self.n)
        return struct.pack("<BH", self.scheme_tag, self.n) + self.value.to_bytes(width, "big")

    @classmethod
    def from_bytes(cls, data: bytes) -> "PublicKey":
        if len(data) < 3:
            raise DecryptionError("public key encoding too short")
        tag, n = struct.unpack_from("<BH", data)
        width = _key_width(tag, n)
        if len(data) != 3 + width:
            raise DecryptionError(f"public key encoding has {len(data)} bytes, expected {3 + width}")
        return cls(tag, n, int.from_bytes(data[3:], "big"))


@dataclass(frozen=True)
class PrivateKey:
    scheme_tag: int
    n: int
    value: int = field(repr=False)


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    private: PrivateKey

    @property
    def n(self) -> int:
        return self.public.n


@dataclass(frozen=True)
class Ciphertext:
    scheme_tag: int
    payload: bytes

    def to_bytes(self) -> bytes:
        return struct.pack("<BI", self.scheme_tag, len(self.payload)) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ciphertext":
        if len(data) < 5:
            raise DecryptionError("ciphertext encoding too short")
        tag, length = struct.unpack_from("<BI", data)
        if len(data) != 5 + length:
            raise DecryptionError(f"ciphertext declares {length} payload bytes, got {len(data) - 5}")
        return cls(tag, bytes(data[5:]))


class EncryptionScheme(ABC):
    name: str
    tag: int

    @abstractmethod
    def keygen(self, n: int, rng=None) -> KeyPair: ...

    @abstractmethod
    def encrypt(self, plaintext: RingElement, pk: PublicKey, rng=None) -> Ciphertext: ...

    @abstractmethod
    def decrypt(self, ct: Ciphertext, sk: PrivateKey, params: RingParams) -> RingElement: ...

    def max_ciphertext_len(self, n: int) -> int:
        return 5 + 2 * _key_width(self.tag, n)

    def _check_key(self, key):
        if key.scheme_tag != self.tag:
            raise ParameterError(f"key belongs to scheme tag {key.scheme_tag}, not {self.name}")

    def _check_ct(self, ct: Ciphertext):
        if ct.scheme_tag != self.tag:
            raise DecryptionError(f"ciphertext tag {ct.scheme_tag} is not {self.name}")


def _element(v: int, params: RingParams) -> RingElement:
    if not 0 <= v < params.size:
        raise DecryptionError(f"decrypted value {v} outside ring of size {params.size}")
    return RingElement(v, params)


@lru_cache(maxsize=1 << 16)
def _is_residue(M: int, p: int) -> bool:
    # plaintexts are small ring elements, so this check repeats a lot
    return _powmod(M, (p - 1) // 2, p) == 1


class ElGamalScheme(EncryptionScheme):
    name = "elgamal"
    tag = 0x01

    def group(self, n: int):
        if n not in SAFE_PRIMES:
            raise ParameterError(
                f"unsupported ElGamal security parameter {n}; choose one of {sorted(SAFE_PRIMES)}")
        p = SAFE_PRIMES[n]
        return p, (p - 1) // 2

    def keygen(self, n: int, rng=None) -> KeyPair:
        rng = rng or _default_rng()
        p, q = self.group(n)
        x = rng.randrange(1, q)
        return KeyPair(PublicKey(self.tag, n, _powmod(GENERATOR, x, p)), PrivateKey(self.tag, n, x))

    @staticmethod
    def _encode(ticks: int, p: int, q: int) -> int:
        # p = 3 mod 4 makes -1 a non-residue, so exactly one of M, p - M
        # lies in the subgroup
        M = ticks + 1
        if M >= q:
            raise ParameterError("ring too large for this group")
        return M if _is_residue(M, p) else p - M

    def encrypt(self, plaintext: RingElement, pk: PublicKey, rng=None) -> Ciphertext:
        self._check_key(pk)
        rng = rng or _default_rng()
        p, q = self.group(pk.n)
        if not 1 < pk.value < p:
            raise ParameterError("public key outside the group")
        y = rng.randrange(1, q)
        c1 = _powmod(GENERATOR, y, p)
        c2 = self._encode(plaintext.ticks, p, q) * _powmod(pk.value, y, p) % p
        w = (pk.n + 7) // 8
        return Ciphertext(self.tag, c1.to_bytes(w, "big") + c2.to_bytes(w, "big"))

    def decrypt(self, ct: Ciphertext, sk: PrivateKey, params: RingParams) -> RingElement:
        self._check_ct(ct)
        self._check_key(sk)
        p, q = self.group(sk.n)
        w = (sk.n + 7) // 8
        if len(ct.payload) != 2 * w:
            raise DecryptionError(f"ElGamal payload must be {2 * w} bytes, got {len(ct.payload)}")
        c1 = int.from_bytes(ct.payload[:w], "big")
        c2 = int.from_bytes(ct.payload[w:], "big")
        if not (0 < c1 < p and 0 < c2 < p):
            raise DecryptionError("ciphertext component outside the group")
        y = c2 * _powmod(c1, q - sk.value, p) % p
        M = y if y <= q else p - y
        return _element(M - 1, params)


class IdentityScheme(EncryptionScheme):
    """Ciphertext = little-endian plaintext ticks.  Insecure on purpose."""

    name = "identity"
    tag = 0x00

    def keygen(self, n: int, rng=None) -> KeyPair:
        if n < 1:
            raise ParameterError("security parameter must be positive")
        rng = rng or _default_rng()
        v = rng.getrandbits(64)
        return KeyPair(PublicKey(self.tag, n, v), PrivateKey(self.tag, n, v))

    def encrypt(self, plaintext, pk, rng=None):
        self._check_key(pk)
        return Ciphertext(self.tag, int(plaintext.ticks).to_bytes(8, "little"))

    def decrypt(self, ct, sk, params):
        self._check_ct(ct)
        if len(ct.payload) != 8:
            raise DecryptionError("identity payload must be 8 bytes")
        return _element(int.from_bytes(ct.payload, "little"), params)


class FixedPadScheme(EncryptionScheme):
    """Adds a per-key constant pad mod 2^64.  Deterministic, so not CPA-secure."""

    name = "fixed-pad"
    tag = 0x02

    def keygen(self, n: int, rng=None) -> KeyPair:
        if n < 1:
            raise ParameterError("security parameter must be positive")
        rng = rng or _default_rng()
        pad = rng.getrandbits(64)
        return KeyPair(PublicKey(self.tag, n, pad * _PAD_MUL % 2**64), PrivateKey(self.tag, n, pad))

    def encrypt(self, plaintext, pk, rng=None):
        self._check_key(pk)
        pad = pk.value * _PAD_INV % 2**64
        return Ciphertext(self.tag, ((plaintext.ticks + pad) % 2**64).to_bytes(8, "little"))

    def decrypt(self, ct, sk, params):
        self._check_ct(ct)
        if len(ct.payload) != 8:
            raise DecryptionError("fixed-pad payload must be 8 bytes")
        return _element((int.from_bytes(ct.payload, "little") - sk.value) % 2**64, params)


SCHEMES = {s.name: s for s in (ElGamalScheme(), IdentityScheme(), FixedPadScheme())}


def get_scheme(name_or_tag) -> EncryptionScheme:
    if isinstance(name_or_tag, EncryptionScheme):
        return name_or_tag
    if isinstance(name_or_tag, int):
        for s in SCHEMES.values():
            if s.tag == name_or_tag:
                return s
    elif name_or_tag in SCHEMES:
        return SCHEMES[name_or_tag]
    raise ParameterError(f"unknown scheme {name_or_tag!r}; known: {sorted(SCHEMES)}")


def keygen(scheme: EncryptionScheme, n: int, rng=None) -> KeyPair:
    return scheme.keygen(n, rng)


def _receiver(idx):
    return idx[1]


def multi_encrypt(scheme: EncryptionScheme, plaintexts: Mapping, public_keys: Mapping,
                  rng=None, receiver_of: Callable = _receiver) -> dict:
    """Encrypt each indexed plaintext under its receiver's key.

    ``plaintexts`` maps an index (``(k, l, x)`` by default) to a RingElement
    and ``receiver_of`` picks the key holder out of the index.  Each entry
    gets fresh encryption randomness; the output keeps the input's keys.
    """
    out = {}
    for idx, pt in plaintexts.items():
        who = receiver_of(idx)
        if who not in public_keys:
            raise ParameterError(f"no public key for receiver {who!r}")
        out[idx] = scheme.encrypt(pt, public_keys[who], rng)
    return out


def multi_decrypt(scheme: EncryptionScheme, ciphertexts: Mapping, private_keys: Mapping,
                  params: RingParams, receiver_of: Callable = _receiver) -> dict:
    out = {}
    for idx, ct in ciphertexts.items():
        who = receiver_of(idx)
        if who not in private_keys:
            raise ParameterError(f"no private key for receiver {who!r}")
        out[idx] = scheme.decrypt(ct, private_keys[who], params)
    return out


# ---------------------------------------------------------------------------
# CPA game
# ---------------------------------------------------------------------------


class CPAAttacker:
    """``choose`` picks the challenge pair and ``guess`` returns the bit."""

    name = "base"

    def choose(self, pk: PublicKey, params: RingParams, rng):
        return (params.element(rng.randrange(params.size)),
                params.element(rng.randrange(params.size)))

    def guess(self, ct: Ciphertext, r0: RingElement, r1: RingElement, pk: PublicKey, rng) -> int:
        raise NotImplementedError


class RandomGuessAttacker(CPAAttacker):
    name = "random-guess"

    def guess(self, ct, r0, r1, pk, rng):
        return rng.getrandbits(1)


class PlaintextMatchAttacker(CPAAttacker):
    """Re-encrypts both candidates and looks for a byte-identical ciphertext."""

    name = "plaintext-match"

    def guess(self, ct, r0, r1, pk, rng):
        scheme = get_scheme(pk.scheme_tag)
        if scheme.encrypt(r0, pk, rng) == ct:
            return 0
        if scheme.encrypt(r1, pk, rng) == ct:
            return 1
        return rng.getrandbits(1)


class ParityAttacker(CPAAttacker):
    """Reads one bit of the ciphertext and matches it to the plaintext parity.

    For ElGamal the bit is the residuosity of ``c2``, which is constant in
    the residue subgroup.  For byte-encoded schemes it is the low payload bit.
    """

    name = "parity"

    def guess(self, ct, r0, r1, pk, rng):
        if r0.ticks % 2 == r1.ticks % 2:
            return rng.getrandbits(1)
        if ct.scheme_tag == ElGamalScheme.tag:
            p = SAFE_PRIMES[pk.n]
            w = len(ct.payload) // 2
            c2 = int.from_bytes(ct.payload[w:], "big")
            bit = 0 if _powmod(c2, (p - 1) // 2, p) == 1 else 1
        else:
            bit = ct.payload[0] & 1
        return 0 if bit == r0.ticks % 2 else 1


CPA_SUITE = (RandomGuessAttacker, PlaintextMatchAttacker, ParityAttacker)


class _CallableAttacker(CPAAttacker):
    def __init__(self, fn):
        self.fn = fn
        self.name = getattr(fn, "__name__", "callable")

    def guess(self, ct, r0, r1, pk, rng):
        return self.fn(ct, r0, r1, pk)


@dataclass(frozen=True)
class CPAResult:
    scheme: str
    attacker: str
    n: int
    trials: int
    wins: int
    ties: int
    untied_wins: int

    @property
    def win_rate(self) -> float:
        return self.wins / self.trials

    @property
    def untied_win_rate(self) -> float:
        untied = self.trials - self.ties
        return self.untied_wins / untied if untied else float("nan")

    @property
    def advantage(self) -> float:
        return self.win_rate - 0.5

    @property
    def band(self) -> float:
        """Three binomial standard errors around 1/2."""
        return 3 * 0.5 / self.trials ** 0.5

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "attacker": self.attacker, "n": self.n,
                "trials": self.trials, "wins": self.wins, "ties": self.ties,
                "win_rate": self.win_rate, "untied_win_rate": self.untied_win_rate,
                "advantage": self.advantage, "band": self.band}


def run_cpa_experiment(scheme: EncryptionScheme, n: int, attacker, trials: int,
                       params: RingParams = RingParams(3, 13), rng=None) -> CPAResult:
    """Play the CPA game ``trials`` times and count the attacker's wins.

    Per trial: fresh key pair, challenge pair from the attacker (uniform by
    default), uniform bit B, encryption of R^B, guess.  Trials whose two
    challenge plaintexts coincide are also tallied as ties, since nothing
    beats a coin flip on them.
    """
    if trials < 1:
        raise ParameterError("trials must be at least 1")
    rng = rng or _default_rng()
    if not isinstance(attacker, CPAAttacker):
        attacker = _CallableAttacker(attacker)
    wins = ties = untied_wins = 0
    for _ in range(trials):
        kp = scheme.keygen(n, rng)
        r0, r1 = attacker.choose(kp.public, params, rng)
        b = rng.getrandbits(1)
        ct = scheme.encrypt(r1 if b else r0, kp.public, rng)
        guess = attacker.guess(ct, r0, r1, kp.public, rng)
        if type(guess) not in (int, bool) or guess not in (0, 1):
            raise HarnessError(f"attacker {attacker.name} returned {guess!r}, expected 0 or 1")
        win = int(guess) == b
        wins += win
        if r0 == r1:
            ties += 1
        else:
            untied_wins += win
    return CPAResult(scheme.name, attacker.name, n, trials, wins, ties, untied_wins)
