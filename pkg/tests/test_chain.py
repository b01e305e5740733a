import hashlib
import itertools
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import Chain, make_cert, tx
from hotstuff1.chain import (GENESIS_BLOCK, Block, BlockStore, MissingBlock, conflicts, decode_block,
                             extends, hash_block, lowest_uncertified_block)
from hotstuff1.identity import GENESIS_CERT, KeyRegistry, VoteContext


def oracle_encoding(b: Block) -> bytes:
    """Independent re-implementation of the canonical block layout."""
    c = b.parent_cert
    cert = struct.pack("<B", int(c.context)) + struct.pack("<Q", c.view) + struct.pack("<Q", c.slot)
    cert += c.block_hash
    cert += b"\x00" if c.aux_hash is None else b"\x01" + c.aux_hash
    if c.context == VoteContext.NEW_VIEW:
        cert += struct.pack("<Q", c.fv)
    cert += struct.pack("<H", len(c.signers))
    for s, sig in zip(c.signers, c.signatures):
        cert += struct.pack("<H", s) + struct.pack("<H", len(sig)) + sig
    out = struct.pack("<Q", b.view) + struct.pack("<Q", b.slot) + cert
    out += struct.pack("<I", len(b.payload))
    for t in b.payload:
        out += struct.pack("<Q", t.tx_id) + struct.pack("<Q", t.client)
        out += struct.pack("<I", len(t.key)) + t.key + struct.pack("<I", len(t.value)) + t.value
    out += b"\x00" if b.carry_hash is None else b"\x01" + b.carry_hash
    return out


def test_genesis_hash_stable():
    assert hash_block(GENESIS_BLOCK) == hash_block(Block(0, 0, GENESIS_BLOCK.parent_cert))
    assert GENESIS_CERT.block_hash == GENESIS_BLOCK.hash


def test_one_payload_byte_changes_hash():
    a = Block(1, 1, GENESIS_CERT, (tx(1, value=b"a"),))
    b = Block(1, 1, GENESIS_CERT, (tx(1, value=b"b"),))
    assert a.hash != b.hash


def test_payload_order_is_hashed():
    reg = KeyRegistry(4, 1)
    parent = make_cert(reg, VoteContext.NEW_SLOT, 2, 1, bytes(32), aux=b"\x05" * 32)
    p = (tx(1), tx(2, key=b"x"), tx(3, key=b"y"))
    a = Block(3, 1, parent, p, b"\x09" * 32)
    b = Block(3, 1, parent, (p[2], p[0], p[1]))
    for blk in (a, b, GENESIS_BLOCK):
        assert blk.encode() == oracle_encoding(blk)
        assert blk.hash == hashlib.sha256(oracle_encoding(blk)).digest()
    assert a.hash != Block(3, 1, parent, (p[1], p[0], p[2]), b"\x09" * 32).hash


def test_decode_round_trip():
    reg = KeyRegistry(4, 1)
    c = make_cert(reg, VoteContext.NEW_VIEW, 2, 3, b"\x01" * 32, aux=b"\x02" * 32, fv=4)
    b = Block(5, 1, c, (tx(1), tx(2)), b"\x03" * 32)
    assert decode_block(b.encode()) == b


def test_store_lookup():
    s = BlockStore()
    b = Block(1, 1, GENESIS_CERT)
    assert s.add(b) and not s.add(b)
    assert s.get(b.hash) is b and s.at(1, 1) == [b]
    with pytest.raises(MissingBlock):
        s.require(b"\x00" * 32)


def linear(reg, depth):
    ch = Chain(reg)
    cert = GENESIS_CERT
    certs = [cert]
    for v in range(1, depth + 1):
        b = ch.block(cert, v)
        cert = ch.certify(b)
        certs.append(cert)
    return ch, certs


def test_extends_direct_parent(reg4):
    ch, c = linear(reg4, 2)
    assert extends(c[2], c[1], ch.store)
    assert not extends(c[1], c[2], ch.store)


def test_extends_is_strict(reg4):
    ch, c = linear(reg4, 2)
    assert not extends(c[2], c[2], ch.store)


def test_extends_transitive_to_genesis(reg4):
    ch, c = linear(reg4, 5)
    assert extends(c[5], GENESIS_CERT, ch.store)
    assert extends(c[5], c[2], ch.store)


def test_extends_missing_block(reg4):
    ch, c = linear(reg4, 2)
    lost = Block(3, 1, c[2])
    orphan = make_cert(reg4, VoteContext.PREPARE, 3, 1, lost.hash)
    with pytest.raises(MissingBlock):
        extends(orphan, c[1], ch.store)


def test_conflicts_siblings_and_ancestry(reg4):
    ch, c = linear(reg4, 3)
    sib = ch.certify(ch.block(c[1], 4))
    assert conflicts(sib, c[3], ch.store)
    assert not conflicts(c[3], c[1], ch.store)


def all_trees(k):
    """Parent index for blocks 1..k (0 is genesis); parents always precede."""
    return itertools.product(*[range(i) for i in range(1, k + 1)])


def test_conflicts_matches_brute_force_on_small_trees():
    reg = KeyRegistry(4, 1, seed=2)
    checked = 0
    for parents in all_trees(5):
        ch = Chain(reg)
        certs = [GENESIS_CERT]
        for i, p in enumerate(parents, start=1):
            b = ch.block(certs[p], i)
            certs.append(ch.certify(b))

        def ancestors(i):
            out = set()
            while i != 0:
                i = parents[i - 1]
                out.add(i)
            return out

        for a, b in itertools.permutations(range(len(certs)), 2):
            path = b in ancestors(a) or a in ancestors(b)
            assert conflicts(certs[a], certs[b], ch.store) == (not path)
            assert extends(certs[a], certs[b], ch.store) == (b in ancestors(a))
            checked += 1
    assert checked == 120 * 30


def test_carry_block_after_new_slot(reg4):
    ch = Chain(reg4, VoteContext.NEW_SLOT)
    b3 = ch.block(GENESIS_CERT, 0, slot=3)
    c3 = ch.certify(b3)
    b4 = ch.block(c3, 0, slot=4)
    assert lowest_uncertified_block(c3, ch.store) == b4


def test_carry_block_after_new_view(reg4):
    ch = Chain(reg4)
    b41 = ch.block(GENESIS_CERT, 1, slot=4)
    c = make_cert(reg4, VoteContext.NEW_VIEW, 1, 4, b41.hash, aux=b41.hash, fv=2)
    b12 = ch.block(c, 2, slot=1)
    assert lowest_uncertified_block(c, ch.store) == b12


def test_carry_block_missing(reg4):
    ch = Chain(reg4, VoteContext.NEW_SLOT)
    c = ch.certify(ch.block(GENESIS_CERT, 1, slot=2))
    with pytest.raises(MissingBlock):
        lowest_uncertified_block(c, ch.store)


@st.composite
def trees(draw):
    k = draw(st.integers(2, 8))
    return [draw(st.integers(0, i - 1)) for i in range(1, k + 1)]


@given(trees(), st.data())
def test_extends_partial_order_and_trichotomy(parents, data):
    reg = KeyRegistry(4, 1, seed=5)
    ch = Chain(reg)
    certs = [GENESIS_CERT]
    for i, p in enumerate(parents, start=1):
        certs.append(ch.certify(ch.block(certs[p], i)))
    idx = st.integers(0, len(certs) - 1)
    a, b, c = (certs[data.draw(idx)] for _ in range(3))
    s = ch.store
    assert not extends(a, a, s)
    if extends(a, b, s) and extends(b, c, s):
        assert extends(a, c, s)
    options = [extends(a, b, s), extends(b, a, s), a == b, conflicts(a, b, s)]
    assert sum(options) == 1


@given(st.integers(1, 4), st.integers(1, 3))
def test_carry_block_is_pure(slot, extra):
    reg = KeyRegistry(4, 1, seed=6)
    ch = Chain(reg, VoteContext.NEW_SLOT)
    c = ch.certify(ch.block(GENESIS_CERT, 2, slot=slot))
    nxt = ch.block(c, 2, slot=slot + 1)
    for i in range(extra):
        ch.block(GENESIS_CERT, 3, slot=i + 1)  # unrelated blocks
    assert lowest_uncertified_block(c, ch.store) == nxt == lowest_uncertified_block(c, ch.store)
