import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_cert
from hotstuff1.identity import (GENESIS_CERT, InsufficientShares, KeyRegistry, Mismatch,
                                QuorumCertificate, VoteContext, assemble_certificate, cert_order,
                                check_params, decode_cert, encode_cert, leader_of, sign_vote,
                                verify_certificate)

H = bytes(range(32))
H2 = bytes(32 * [7])


def test_sign_then_verify(reg4):
    s = sign_vote(reg4.key(1), VoteContext.PREPARE, 3, 1, H)
    assert reg4.verify_share(s)
    assert s.signer == 1 and s.view == 3 and s.aux_hash is None


def test_aux_hash_propagates(reg4):
    s = sign_vote(reg4.key(2), VoteContext.NEW_VIEW, 5, 1, H, H2, fv=6)
    assert s.aux_hash == H2
    assert reg4.verify_share(s)


def test_signing_is_deterministic(reg4):
    # oracle: a second registry built from the same seed signs identically
    other = KeyRegistry(4, 1, seed=7)
    a = sign_vote(reg4.key(3), VoteContext.COMMIT, 9, 1, H)
    b = sign_vote(other.key(3), VoteContext.COMMIT, 9, 1, H)
    assert a == b
    assert a.signature == b.signature


def test_share_from_wrong_key_rejected(reg4):
    other = KeyRegistry(4, 1, seed=8)
    s = sign_vote(other.key(1), VoteContext.PREPARE, 3, 1, H)
    assert not reg4.verify_share(s)


def test_three_matching_shares_make_cert(reg4):
    c = make_cert(reg4, VoteContext.PREPARE, 3, 1, H, signers=[1, 2, 3])
    assert c.signers == (1, 2, 3)
    assert verify_certificate(c, reg4)


def test_two_shares_insufficient(reg4):
    shares = [sign_vote(reg4.key(i), VoteContext.PREPARE, 3, 1, H) for i in (1, 2)]
    with pytest.raises(InsufficientShares):
        assemble_certificate(shares, 4, 1)


def test_all_three_multisets_of_four_signers():
    # oracle: only multisets with three distinct members reach the quorum of 3
    reg = KeyRegistry(4, 1, seed=1)
    shares = {i: sign_vote(reg.key(i), VoteContext.PREPARE, 1, 1, H) for i in range(1, 5)}
    ok = []
    for combo in itertools.combinations_with_replacement(range(1, 5), 3):
        try:
            assemble_certificate([shares[i] for i in combo], 4, 1)
            ok.append(combo)
        except InsufficientShares:
            pass
    assert ok == [(1, 2, 3), (1, 2, 4), (1, 3, 4), (2, 3, 4)]


def test_mismatched_shares(reg4):
    a = sign_vote(reg4.key(1), VoteContext.PREPARE, 3, 1, H)
    b = sign_vote(reg4.key(2), VoteContext.PREPARE, 3, 1, H2)
    c = sign_vote(reg4.key(3), VoteContext.PREPARE, 3, 1, H)
    with pytest.raises(Mismatch):
        assemble_certificate([a, b, c], 4, 1)


def test_smallest_signers_chosen(reg4):
    shares = [sign_vote(reg4.key(i), VoteContext.PREPARE, 1, 1, H) for i in (4, 2, 3, 1)]
    c = assemble_certificate(shares, 4, 1)
    assert c.signers == (1, 2, 3)


def test_new_view_cert_needs_fv(reg4):
    shares = [sign_vote(reg4.key(i), VoteContext.NEW_VIEW, 1, 2, H, H2, fv=3) for i in (1, 2, 3)]
    c = assemble_certificate(shares, 4, 1)
    assert c.fv == 3 and c.formed_in == 3
    with pytest.raises(ValueError):
        sign_vote(reg4.key(1), VoteContext.PREPARE, 1, 1, H, fv=2)


def test_flipped_signature_byte_fails(reg4):
    c = make_cert(reg4, VoteContext.PREPARE, 2, 1, H)
    sig = bytearray(c.signatures[0])
    sig[0] ^= 1
    bad = QuorumCertificate(c.context, c.view, c.slot, c.block_hash, c.aux_hash, c.signers,
                            (bytes(sig),) + c.signatures[1:], c.fv)
    assert not verify_certificate(bad, reg4)


def _tampered(c):
    """Every single-edit tamper of a valid certificate."""
    yield "dup-signer", QuorumCertificate(c.context, c.view, c.slot, c.block_hash, c.aux_hash,
                                          (c.signers[0], c.signers[1], c.signers[1]),
                                          (c.signatures[0], c.signatures[1], c.signatures[1]))
    yield "short", QuorumCertificate(c.context, c.view, c.slot, c.block_hash, c.aux_hash,
                                     c.signers[:2], c.signatures[:2])
    yield "view", QuorumCertificate(c.context, c.view + 1, c.slot, c.block_hash, c.aux_hash,
                                    c.signers, c.signatures)
    yield "slot", QuorumCertificate(c.context, c.view, c.slot + 1, c.block_hash, c.aux_hash,
                                    c.signers, c.signatures)
    yield "hash", QuorumCertificate(c.context, c.view, c.slot, H2, c.aux_hash, c.signers, c.signatures)
    yield "aux", QuorumCertificate(c.context, c.view, c.slot, c.block_hash, H2, c.signers, c.signatures)
    yield "context", QuorumCertificate(VoteContext.COMMIT, c.view, c.slot, c.block_hash, c.aux_hash,
                                       c.signers, c.signatures)
    yield "relabel", QuorumCertificate(c.context, c.view, c.slot, c.block_hash, c.aux_hash,
                                       (c.signers[0], c.signers[1], 4), c.signatures)
    yield "unknown-signer", QuorumCertificate(c.context, c.view, c.slot, c.block_hash, c.aux_hash,
                                              (1, 2, 9), c.signatures)
    yield "genesis-flag", QuorumCertificate(c.context, c.view, c.slot, c.block_hash, c.aux_hash,
                                            c.signers, c.signatures, None, True)
    for i in range(3):
        for bit in (0, 7):
            sigs = list(c.signatures)
            s = bytearray(sigs[i])
            s[bit] ^= 0x80
            sigs[i] = bytes(s)
            yield f"sig{i}.{bit}", QuorumCertificate(c.context, c.view, c.slot, c.block_hash,
                                                     c.aux_hash, c.signers, tuple(sigs))


def test_all_tamper_modes_rejected(reg4):
    c = make_cert(reg4, VoteContext.PREPARE, 2, 1, H, signers=[1, 2, 3])
    assert verify_certificate(c, reg4)
    for name, bad in _tampered(c):
        assert not verify_certificate(bad, reg4), name


def test_genesis_cert_valid_by_fiat(reg4):
    assert verify_certificate(GENESIS_CERT, reg4)


@pytest.mark.parametrize("a,b,want", [
    ((1, 4), (2, 1), -1),
    ((2, 1), (2, 3), -1),
    ((2, 3), (2, 3), 0),
    ((3, 1), (2, 9), 1),
])
def test_cert_order_examples(reg4, a, b, want):
    ca = make_cert(reg4, VoteContext.NEW_SLOT, a[0], a[1], H)
    cb = make_cert(reg4, VoteContext.NEW_SLOT, b[0], b[1], H)
    assert cert_order(ca, cb) == want


def test_leader_rotation():
    assert [leader_of(v, 4) for v in range(1, 9)] == [1, 2, 3, 4, 1, 2, 3, 4]
    assert leader_of(0, 4) == 4


def test_check_params():
    check_params(4, 1)
    with pytest.raises(ValueError):
        check_params(3, 1)


def test_cert_encoding_round_trip(reg4):
    for c in (make_cert(reg4, VoteContext.PREPARE, 4, 1, H),
              make_cert(reg4, VoteContext.NEW_VIEW, 4, 2, H, aux=H2, fv=5), GENESIS_CERT):
        d, off = decode_cert(encode_cert(c))
        assert d == c and off == len(encode_cert(c))


@pytest.mark.parametrize("n", [4, 7, 10, 13])
def test_quorum_intersection(n):
    # exhaustive for small n, sampled pairs for larger n
    f = (n - 1) // 3
    q = n - f
    quorums = list(itertools.combinations(range(n), q))
    pairs = itertools.combinations(quorums, 2) if len(quorums) < 200 else \
        itertools.islice(itertools.combinations(quorums, 2), 0, 20000, 7)
    assert min(len(set(a) & set(b)) for a, b in pairs) >= f + 1


keys = st.tuples(st.integers(0, 5), st.integers(1, 5))


@given(keys, keys, keys)
def test_cert_order_total(a, b, c):
    reg = KeyRegistry(4, 1, seed=0)
    ca, cb, cc = (make_cert(reg, VoteContext.NEW_SLOT, k[0], k[1], H) for k in (a, b, c))
    assert cert_order(ca, cb) == -cert_order(cb, ca)
    if cert_order(ca, cb) <= 0 and cert_order(cb, cc) <= 0:
        assert cert_order(ca, cc) <= 0
    assert (cert_order(ca, cb) == 0) == (a == b)


@given(st.lists(st.integers(1, 4), min_size=0, max_size=6), st.integers(0, 2))
def test_no_cert_below_quorum_verifies(signers, drop):
    reg = KeyRegistry(4, 1, seed=3)
    shares = [sign_vote(reg.key(i), VoteContext.PREPARE, 1, 1, H) for i in signers]
    distinct = len(set(signers))
    try:
        c = assemble_certificate(shares, 4, 1)
    except InsufficientShares:
        assert distinct < 3
        return
    assert distinct >= 3 and verify_certificate(c, reg)
    cut = QuorumCertificate(c.context, c.view, c.slot, c.block_hash, c.aux_hash,
                            c.signers[:drop], c.signatures[:drop])
    assert not verify_certificate(cut, reg)
