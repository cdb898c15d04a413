import itertools
import json
import random
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import chisquare

from zmsdetect.crypto import ElGamalScheme
from zmsdetect.errors import (
    IncompleteRoundError, InputError, ParameterError, ProtocolAbort, ProtocolError, StateError,
)
from zmsdetect.protocol import (
    HEADER, BroadcastBus, FusionEngine, Header, Kind, MaskMatrix, ObfuscatedReport,
    ProtocolConfig, SensorEngine, Transcript, build_network, decode_message, encode_message,
    fusion_statistic, fusion_statistic_exact, generate_masks, obfuscate, run_on_types,
    run_protocol, statistic_numerator,
)
from zmsdetect.ring import RingParams
from zmsdetect.typestat import EmpiricalType, diameter_max, hellinger_diameter, quantize_sqrt


def cfg(K=3, X=2, m=13, scheme="elgamal", n=128):
    return ProtocolConfig.default(K, X, m=m, scheme=scheme, security_n=n)


def random_types(rng, K, X, t=50):
    return [EmpiricalType(tuple(int(c) for c in rng.multinomial(t, rng.dirichlet(np.ones(X)))))
            for _ in range(K)]


def test_header_layout():
    h = Header(2, 2, 3, 4, 13, 2, 1, 0)
    raw = h.pack()
    assert len(raw) == 16 and raw[:2] == b"ZM"
    assert raw[4] == 2 and int.from_bytes(raw[5:7], "little") == 3
    assert raw[9] == 13 and int.from_bytes(raw[14:16], "little") == 0
    assert Header.unpack(raw) == h
    with pytest.raises(ProtocolError):
        Header.unpack(b"XX" + raw[2:])


def test_config_checks():
    with pytest.raises(ParameterError):
        ProtocolConfig(3, 2, RingParams(3, 13))
    with pytest.raises(ParameterError):
        ProtocolConfig(1, 2, RingParams(3, 13))
    assert cfg(4, 3).band() == 16 * 3 / 2 ** 13


def test_mask_matrix_rows_and_columns():
    rng = np.random.default_rng(0)
    p = RingParams(4, 13)
    mm = MaskMatrix.generate(3, 2, p, rng)
    mm.validate()
    assert np.all(p.sum(mm.column_sums(), axis=0) == 0)
    mm2 = MaskMatrix.generate(3, 2, p, random.Random(1))
    mm2.validate()


def test_zero_sum_exhaustive_small():
    # K=3, m=2, |X|=1: all 16^6 choices of the off-diagonal entries
    p = RingParams(4, 2)
    n = p.size
    grid = np.stack(np.meshgrid(*[np.arange(n)] * 4, indexing="ij"), -1).reshape(-1, 4)
    checked = 0
    for r01, r02 in itertools.product(range(n), repeat=2):
        R = np.zeros((grid.shape[0], 3, 3), dtype=np.int64)
        R[:, 0, 1], R[:, 0, 2] = r01, r02
        R[:, 1, 0], R[:, 1, 2], R[:, 2, 0], R[:, 2, 1] = grid.T
        for k in range(3):
            R[:, k, k] = (-R[:, k].sum(axis=1)) % n
        cols = R.sum(axis=1) % n
        assert np.all(cols.sum(axis=1) % n == 0)
        checked += grid.shape[0]
    assert checked == n ** 6


def test_zero_sum_random_batch():
    rng = np.random.default_rng(2)
    for K in range(2, 9):
        p = RingParams(K + 1, 13)
        R = generate_masks(1000, K, 5, p, rng)
        col = p.sum(R, axis=1)
        assert np.all(p.sum(col, axis=1) == 0)


def test_statistic_exact_vectorized():
    rng = np.random.default_rng(3)
    for _ in range(500):
        K = int(rng.integers(2, 9))
        X = int(rng.integers(2, 17))
        p = RingParams(K + 1, 13)
        types = random_types(rng, K, X, t=int(rng.integers(1, 400)))
        Q = np.array([quantize_sqrt(e, p).ticks for e in types], dtype=np.int64)
        G = obfuscate(Q, generate_masks(1, K, X, p, rng)[0], p)
        num = int(statistic_numerator(G, K, p))
        col = Q.sum(axis=0)
        assert num == K * K * 4 ** 13 - int((col * col).sum())
        d_true = hellinger_diameter([e.as_array().reshape(-1) for e in types])
        assert abs(d_true - num / 4 ** 13) <= K * K * X / 2 ** 13


def test_full_protocol_matches_plaintext():
    rng = np.random.default_rng(4)
    c = cfg(4, 3)
    types = random_types(rng, 4, 3)
    res = run_on_types(c, types, 0.3, seed=9)
    Q = np.array([quantize_sqrt(e, c.ring).ticks for e in types])
    col = Q.sum(axis=0)
    assert res.statistic_exact == Fraction(16 * 4 ** 13 - int((col * col).sum()), 4 ** 13)
    assert res.decision == int(res.statistic >= 0.3)
    kinds = [e.kind for e in res.transcript.entries]
    assert kinds.count(Kind.PUBLIC_KEY) == 4
    assert kinds.count(Kind.MASK_CIPHERTEXT) == 4 * 3 * 3
    assert kinds.count(Kind.REPORT) == 4


def test_phase_bookkeeping_and_counts():
    c = cfg(2, 2)
    sensors, fusion = build_network(c, [EmpiricalType((1, 1)), EmpiricalType((2, 0))], 0.1, seed=1)
    msgs = [s.phase1_announce() for s in sensors]
    for s in sensors:
        for m in msgs:
            s.receive_public_key(m)
    assert all(len(s.foreign_keys) == 1 for s in sensors)
    assert len(sensors[0].phase2_exchange()) == 2


def test_three_sensors_hold_two_foreign_keys():
    c = cfg(3, 2)
    sensors, fusion = build_network(c, [EmpiricalType((1, 1))] * 3, 0.1, seed=2)
    run_protocol(sensors, fusion)
    assert all(len(s.foreign_keys) == 2 for s in sensors)
    rng = np.random.default_rng(0)
    total = c.ring.sum(np.array([s.mask_sum for s in sensors]), axis=0)
    assert np.all(total == 0)


def test_state_errors():
    c = cfg(2, 2)
    s = SensorEngine(0, c, random.Random(0))
    with pytest.raises(StateError):
        s.phase1_announce()
    s.load_type(EmpiricalType((1, 1)))
    s.phase1_announce()
    with pytest.raises(StateError):
        s.phase1_announce()
    with pytest.raises(StateError):
        s.phase3_report()
    with pytest.raises(IncompleteRoundError):
        s.phase2_exchange()
    with pytest.raises(InputError):
        SensorEngine(1, c).load_type(EmpiricalType((1, 1, 1)))


def test_zero_masks_fixture():
    c = cfg(3, 2)
    types = [EmpiricalType((3, 1)), EmpiricalType((2, 2)), EmpiricalType((0, 4))]
    res = run_on_types(c, types, 0.1, seed=3, zero_masks=True)
    for k, rep in enumerate(res.reports):
        assert rep.values == quantize_sqrt(types[k], c.ring).ticks


def test_single_report_uniform():
    # one G_k(x) over many runs with a fixed type: uniform on the ring
    rng = np.random.default_rng(5)
    p = RingParams(4, 3)
    Q = np.array([[5, 3], [7, 0], [2, 6]], dtype=np.int64)
    G = obfuscate(Q[None], generate_masks(100_000, 3, 2, p, rng), p)
    counts = np.bincount(G[:, 1, 0], minlength=p.size)
    assert chisquare(counts).pvalue > 0.01


def test_tampered_ciphertext_aborts_with_sender():
    c = cfg(3, 2)
    sensors, fusion = build_network(c, [EmpiricalType((1, 1))] * 3, 0.1, seed=4)

    def tamper(seq, wire):
        hdr = Header.unpack(wire)
        if hdr.kind == Kind.MASK_CIPHERTEXT and hdr.sender == 2 and hdr.receiver == 0:
            wire = bytearray(wire)
            wire[-1] ^= 0xFF
            wire = bytes(wire)
        return wire

    with pytest.raises(ProtocolAbort) as info:
        run_protocol(sensors, fusion, BroadcastBus(c, interceptor=tamper))
    assert info.value.sensor == 2 and info.value.phase == 2


def test_missing_ciphertext_incomplete_round():
    c = cfg(3, 2)
    sensors, fusion = build_network(c, [EmpiricalType((1, 1))] * 3, 0.1, seed=5)
    drop = lambda seq, msg: msg.kind == Kind.MASK_CIPHERTEXT and msg.sender == 1 and msg.receiver == 2
    with pytest.raises(IncompleteRoundError) as info:
        run_protocol(sensors, fusion, BroadcastBus(c, drop=drop))
    assert info.value.sensor == 1


def test_threshold_edges():
    rng = np.random.default_rng(6)
    c = cfg(3, 2)
    for seed in range(5):
        types = random_types(rng, 3, 2)
        assert run_on_types(c, types, 0.0, seed=seed).decision == 1
        hi = diameter_max(3, 2) + c.band() + 1e-9
        assert run_on_types(c, types, hi, seed=seed).decision == 0


def test_identical_types_near_zero():
    c = cfg(4, 5)
    et = EmpiricalType((3, 1, 4, 1, 5))
    res = run_on_types(c, [et] * 4, 0.0, seed=7)
    assert abs(res.statistic) <= c.band()


def test_fusion_validation():
    c = cfg(3, 2)
    reps = [ObfuscatedReport(k, (0, 0)) for k in range(3)]
    assert fusion_statistic(reps, c) == 9.0
    with pytest.raises(ProtocolError):
        fusion_statistic(reps[:2], c)
    with pytest.raises(ProtocolError):
        fusion_statistic(reps[:2] + [ObfuscatedReport(0, (0, 0))], c)
    with pytest.raises(ProtocolError):
        fusion_statistic(reps[:2] + [ObfuscatedReport(2, (0,))], c)
    with pytest.raises(ProtocolError):
        decode_message(encode_message(reps[0], c), cfg(3, 3))


def test_transcript_roundtrip_and_privacy(tmp_path):
    c = cfg(3, 2)
    sensors, fusion = build_network(c, [EmpiricalType((2, 1)), EmpiricalType((0, 3)),
                                        EmpiricalType((1, 2))], 0.2, seed=8)
    res = run_protocol(sensors, fusion)
    path = tmp_path / "t.jsonl"
    res.transcript.write(path)
    back = Transcript.read(path)
    assert back.entries == res.transcript.entries
    for line in path.read_text().splitlines():
        assert set(json.loads(line)) == {"seq", "kind", "phase", "sender", "receiver", "wire"}
    blob = path.read_text()
    for s in sensors:
        sk = s.keypair.private.value
        assert format(sk, "x") not in blob
        assert s.keypair.private.value.to_bytes(16, "big").hex() not in blob
    msgs = back.messages(c)
    assert len(msgs) == len(back)


def test_determinism():
    rng = np.random.default_rng(9)
    c = cfg(3, 4)
    types = random_types(rng, 3, 4)
    a = run_on_types(c, types, 0.5, seed=42)
    b = run_on_types(c, types, 0.5, seed=42)
    assert a.transcript.to_jsonl() == b.transcript.to_jsonl()


def test_decision_agrees_with_plaintext_small():
    rng = np.random.default_rng(10)
    c = cfg(3, 3, scheme="elgamal", n=64)
    for seed in range(30):
        types = random_types(rng, 3, 3, t=20)
        gamma = float(rng.uniform(0, 2))
        res = run_on_types(c, types, gamma, seed=seed)
        d = hellinger_diameter([e.as_array() for e in types])
        if (d >= gamma) != bool(res.decision):
            assert abs(d - gamma) <= c.band()


def test_default_group_end_to_end():
    rng = np.random.default_rng(12)
    c = ProtocolConfig.default(3, 2)
    assert c.security_n == 2048
    types = random_types(rng, 3, 2)
    res = run_on_types(c, types, 0.5, seed=3)
    Q = np.array([quantize_sqrt(e, c.ring).ticks for e in types])
    col = Q.sum(axis=0)
    assert res.statistic_exact == Fraction(9 * 4 ** 13 - int((col * col).sum()), 4 ** 13)
