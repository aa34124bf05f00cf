"""Tests for the hash-based signature scheme.

Chain-count expectations below are hand-computed from the closed formulas
(l1 = ceil(8*n_h / log2 w), l2 = floor(log_w(l1*(w-1))) + 1) and frozen
here as an independent check on the implementation.
"""

from __future__ import annotations

import random

import pytest

from agilecrypt.errors import KeyExhausted, MalformedEncoding, ParameterError
from agilecrypt.hbs import (
    HbsMode,
    HbsParams,
    hbs_export_public,
    hbs_keygen,
    hbs_parse_public,
    hbs_parse_sig,
    hbs_serialize_sig,
    hbs_sign,
    hbs_verify,
)
from agilecrypt.primitives import DeterministicRng

# (n_h, w, h) -> hand-computed (l1, l2)
_CHAIN_COUNTS = {
    (16, 16, 4): (32, 3),
    (32, 16, 4): (64, 3),
    (16, 4, 4): (64, 4),
    (16, 256, 4): (16, 2),
    (16, 2, 4): (128, 8),
    (32, 2, 4): (256, 9),
    (32, 4, 4): (128, 5),
    (32, 256, 4): (32, 2),
    (16, 16, 6): (32, 3),
    (16, 16, 8): (32, 3),
}


def _params(n_h=16, w=16, h=4, mode=HbsMode.STATEFUL) -> HbsParams:
    return HbsParams(n_h=n_h, w=w, h=h, mode=mode)


def test_chain_count_formula():
    for (n_h, w, h), (l1, l2) in _CHAIN_COUNTS.items():
        p = _params(n_h=n_h, w=w, h=h)
        assert (p.l1, p.l2) == (l1, l2), (n_h, w, h)
        assert p.l == l1 + l2


def test_invalid_params_rejected():
    with pytest.raises(ParameterError):
        _params(n_h=24)
    with pytest.raises(ParameterError):
        _params(w=12)
    with pytest.raises(ParameterError):
        _params(h=3)
    with pytest.raises(ParameterError):
        _params(h=17)


def test_algorithm_id_roundtrip():
    p = _params(n_h=32, w=16, h=12, mode=HbsMode.STATELESS)
    assert p.algorithm_id == "SPX-TOY-32-16-12-SL"
    assert HbsParams.from_algorithm_id("SPX-TOY-32-16-12-SL") == p
    assert HbsParams.from_algorithm_id("SPX-TOY-16-16-8-S") == _params(n_h=16, h=8)
    with pytest.raises(ParameterError):
        HbsParams.from_algorithm_id("SPX-TOY-16-16-8")
    with pytest.raises(ParameterError):
        HbsParams.from_algorithm_id("CME-TOY-10-8")


def test_keygen_deterministic_root():
    rng = DeterministicRng(b"keygen determinism")
    kp1 = hbs_keygen(_params(), rng)
    kp2 = hbs_keygen(_params(), DeterministicRng(b"keygen determinism"))
    assert kp1.seed == kp2.seed
    assert kp1.root == kp2.root
    assert kp1.next_leaf == 0
    # Root is a pure function of (seed, params).
    assert hbs_keygen(_params(), DeterministicRng(b"other")).root != kp1.root


def test_sign_verify_roundtrip_and_auth_path_len():
    rng = DeterministicRng(b"roundtrip")
    kp = hbs_keygen(_params(), rng)
    sig = hbs_sign(kp, b"Hallo Welt!", rng)
    assert len(sig.auth_path) == 4
    assert len(sig.wots_sig) == kp.params.l
    assert hbs_verify(kp.root, kp.params, b"Hallo Welt!", sig)
    assert not hbs_verify(kp.root, kp.params, b"Hallo Welt?", sig)


def test_stateful_counter_semantics_and_exhaustion():
    rng = DeterministicRng(b"exhaustion")
    kp = hbs_keygen(_params(h=4), rng)
    indices = []
    for _ in range(16):
        sig = hbs_sign(kp, b"msg", rng)
        indices.append(sig.leaf_index)
    assert indices == list(range(16))
    with pytest.raises(KeyExhausted):
        hbs_sign(kp, b"one too many", rng)


def test_stateful_signatures_all_verify():
    rng = DeterministicRng(b"all leaves")
    kp = hbs_keygen(_params(h=4), rng)
    for i in range(16):
        msg = b"message %d" % i
        sig = hbs_sign(kp, msg, rng)
        assert hbs_verify(kp.root, kp.params, msg, sig)


def test_stateless_mode_roundtrips():
    rng = DeterministicRng(b"stateless")
    kp = hbs_keygen(_params(h=6, mode=HbsMode.STATELESS), rng)
    for i in range(50):
        msg = b"stateless %d" % i
        sig = hbs_sign(kp, msg, rng)
        assert 0 <= sig.leaf_index < 64
        assert hbs_verify(kp.root, kp.params, msg, sig)
    # Stateless signing never touches the counter.
    assert kp.next_leaf == 0


def test_verify_rejects_mutations():
    rng = DeterministicRng(b"mutations")
    trial_rng = random.Random(201)
    kp = hbs_keygen(_params(h=4), rng)
    kp_sl = hbs_keygen(_params(h=4, mode=HbsMode.STATELESS), rng)
    for trial in range(1000):
        use_sl = trial_rng.random() < 0.5
        target = kp_sl if use_sl else kp
        if not use_sl and target.next_leaf == 16:
            target = kp_sl
            use_sl = True
        msg = trial_rng.randbytes(trial_rng.randrange(0, 64))
        sig = hbs_sign(target, msg, rng)
        blob = bytearray(hbs_serialize_sig(sig))
        if trial_rng.random() < 0.2 and msg:
            mutated_msg = bytearray(msg)
            pos = trial_rng.randrange(len(mutated_msg) * 8)
            mutated_msg[pos // 8] ^= 1 << (pos % 8)
            assert not hbs_verify(target.root, target.params, bytes(mutated_msg), sig)
        else:
            pos = trial_rng.randrange(len(blob) * 8)
            blob[pos // 8] ^= 1 << (pos % 8)
            mutated = hbs_parse_sig(target.params, bytes(blob))
            assert not hbs_verify(target.root, target.params, msg, mutated)


def test_verify_rejects_wrong_root_and_bad_sizes():
    rng = DeterministicRng(b"wrong root")
    kp_a = hbs_keygen(_params(), rng)
    kp_b = hbs_keygen(_params(), rng)
    sig = hbs_sign(kp_a, b"msg", rng)
    assert hbs_verify(kp_a.root, kp_a.params, b"msg", sig)
    assert not hbs_verify(kp_b.root, kp_b.params, b"msg", sig)
    # Malformed field sizes reject instead of raising.
    bad = hbs_sign(kp_a, b"msg2", rng)
    bad.wots_sig = bad.wots_sig[:-1]
    assert not hbs_verify(kp_a.root, kp_a.params, b"msg2", bad)
    bad2 = hbs_sign(kp_a, b"msg3", rng)
    bad2.auth_path = bad2.auth_path + [bad2.auth_path[0]]
    assert not hbs_verify(kp_a.root, kp_a.params, b"msg3", bad2)
    bad3 = hbs_sign(kp_a, b"msg4", rng)
    bad3.leaf_index = 16
    assert not hbs_verify(kp_a.root, kp_a.params, b"msg4", bad3)


def test_signature_size_formula_exact_on_grid():
    rng = DeterministicRng(b"size grid")
    for (n_h, w, h) in _CHAIN_COUNTS:
        p = _params(n_h=n_h, w=w, h=h)
        kp = hbs_keygen(p, rng)
        sig = hbs_sign(kp, b"sized", rng)
        blob = hbs_serialize_sig(sig)
        assert len(blob) == 4 + 32 + p.l * n_h + h * n_h
        assert len(blob) == p.signature_size
        assert hbs_verify(kp.root, p, b"sized", hbs_parse_sig(p, blob))


def test_sig_serialization_roundtrip():
    rng = DeterministicRng(b"sig serde")
    trial_rng = random.Random(202)
    kp = hbs_keygen(_params(h=6, mode=HbsMode.STATELESS), rng)
    for _ in range(100):
        msg = trial_rng.randbytes(trial_rng.randrange(0, 32))
        sig = hbs_sign(kp, msg, rng)
        parsed = hbs_parse_sig(kp.params, hbs_serialize_sig(sig))
        assert parsed == sig
    with pytest.raises(MalformedEncoding):
        hbs_parse_sig(kp.params, b"")
    with pytest.raises(MalformedEncoding):
        hbs_parse_sig(kp.params, hbs_serialize_sig(sig)[:-1])


def test_public_key_export_roundtrip():
    rng = DeterministicRng(b"pub serde")
    for mode in (HbsMode.STATEFUL, HbsMode.STATELESS):
        kp = hbs_keygen(_params(mode=mode), rng)
        blob = hbs_export_public(kp)
        params, root = hbs_parse_public(blob)
        assert params == kp.params
        assert root == kp.root
    with pytest.raises(MalformedEncoding):
        hbs_parse_public(b"")
    with pytest.raises(MalformedEncoding):
        hbs_parse_public(blob[:-1])
    with pytest.raises(MalformedEncoding):
        hbs_parse_public(blob + b"\x00")
