"""Blocks, the block store and the certificate relations built on top of them."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .identity import (
    GENESIS_CERT,
    GENESIS_HASH,
    ROOT_CERT,
    QuorumCertificate,
    VoteContext,
    cert_order,
    decode_cert,
    encode_cert,
)

DEFAULT_BATCH = 100


class MissingBlock(Exception):
    def __init__(self, digest: bytes):
        super().__init__(digest.hex()[:16])
        self.digest = digest


@dataclass(frozen=True)
class Transaction:
    tx_id: int
    client: int
    key: bytes
    value: bytes

    def encode(self) -> bytes:
        return (struct.pack("<QQI", self.tx_id, self.client, len(self.key)) + self.key
                + struct.pack("<I", len(self.value)) + self.value)


def decode_tx(data: bytes, offset: int) -> tuple[Transaction, int]:
    tx_id, client, klen = struct.unpack_from("<QQI", data, offset)
    offset += 20
    key = data[offset:offset + klen]
    offset += klen
    (vlen,) = struct.unpack_from("<I", data, offset)
    offset += 4
    value = data[offset:offset + vlen]
    return Transaction(tx_id, client, key, value), offset + vlen


@dataclass(frozen=True)
class Block:
    view: int
    slot: int
    parent_cert: QuorumCertificate
    payload: tuple = ()
    carry_hash: Optional[bytes] = None
    hash: bytes = field(default=b"", compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "payload", tuple(self.payload))
        object.__setattr__(self, "hash", hashlib.sha256(self.encode()).digest())

    def encode(self) -> bytes:
        parts = [struct.pack("<QQ", self.view, self.slot), encode_cert(self.parent_cert),
                 struct.pack("<I", len(self.payload))]
        parts.extend(tx.encode() for tx in self.payload)
        if self.carry_hash is None:
            parts.append(b"\x00")
        else:
            parts.append(b"\x01" + self.carry_hash)
        return b"".join(parts)

    @property
    def key(self) -> tuple[int, int]:
        return (self.view, self.slot)

    @property
    def parent_hash(self) -> bytes:
        """Hash of the block this one follows in the ledger.

        A first-slot block that carries B_u executes right after B_u, so the
        carried block is its ledger parent.
        """
        return self.carry_hash if self.carry_hash is not None else self.parent_cert.block_hash

    def __hash__(self):
        return hash(self.hash)

    def __eq__(self, other):
        return isinstance(other, Block) and other.hash == self.hash

    def __repr__(self):
        return f"B({self.slot},{self.view})#{self.hash.hex()[:8]}"


def hash_block(block: Block) -> bytes:
    return block.hash


def decode_block(data: bytes) -> Block:
    view, slot = struct.unpack_from("<QQ", data, 0)
    cert, off = decode_cert(data, 16)
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    txs = []
    for _ in range(count):
        tx, off = decode_tx(data, off)
        txs.append(tx)
    carry = None
    if data[off]:
        carry = data[off + 1:off + 33]
    return Block(view, slot, cert, tuple(txs), carry)


GENESIS_BLOCK = Block(0, 0, ROOT_CERT, (), None)
assert GENESIS_BLOCK.hash == GENESIS_HASH


class BlockStore:
    def __init__(self):
        self.blocks: dict[bytes, Block] = {GENESIS_BLOCK.hash: GENESIS_BLOCK}
        self.by_pos: dict[tuple[int, int], list[bytes]] = {(0, 0): [GENESIS_BLOCK.hash]}

    def add(self, block: Block) -> bool:
        if block.hash in self.blocks:
            return False
        self.blocks[block.hash] = block
        self.by_pos.setdefault(block.key, []).append(block.hash)
        return True

    def get(self, digest: bytes) -> Optional[Block]:
        return self.blocks.get(digest)

    def require(self, digest: bytes) -> Block:
        b = self.blocks.get(digest)
        if b is None:
            raise MissingBlock(digest)
        return b

    def __contains__(self, digest: bytes) -> bool:
        return digest in self.blocks

    def at(self, view: int, slot: int) -> list[Block]:
        return [self.blocks[h] for h in self.by_pos.get((view, slot), ())]

    def block_of(self, cert: QuorumCertificate) -> Block:
        return self.require(cert.block_hash)

    def missing_ancestry(self, digest: bytes, stop: Iterable[bytes] = ()) -> Optional[bytes]:
        """First missing hash on the ledger-parent walk from ``digest``, or None."""
        stop = set(stop)
        stop.add(GENESIS_BLOCK.hash)
        h = digest
        while h not in stop:
            b = self.blocks.get(h)
            if b is None:
                return h
            h = b.parent_hash
        return None


def extends(child: QuorumCertificate, ancestor: QuorumCertificate, store: BlockStore) -> bool:
    """True iff ``child``'s block reaches ``ancestor``'s block via parent certificates."""
    if cert_order(child, ancestor) <= 0:
        return False
    target = ancestor.block_hash
    h = child.block_hash
    b = store.require(h)
    if h == target:
        return False
    while True:
        p = b.parent_cert
        if p.block_hash == target:
            return True
        if p is ROOT_CERT or p.block_hash == ROOT_CERT.block_hash:
            return False
        if cert_order(p, ancestor) < 0:
            return False
        b = store.require(p.block_hash)


def conflicts(a: QuorumCertificate, b: QuorumCertificate, store: BlockStore) -> bool:
    if a.block_hash == b.block_hash:
        return False
    return not extends(a, b, store) and not extends(b, a, store)


def lowest_uncertified_block(cert: QuorumCertificate, store: BlockStore) -> Block:
    """The carry block B_u for a first-slot proposal extending ``cert``."""
    if cert.context == VoteContext.NEW_VIEW:
        view, slot = cert.fv, 1
    elif cert.genesis:
        view, slot = 1, 1
    elif cert.context == VoteContext.NEW_SLOT:
        view, slot = cert.view, cert.slot + 1
    else:
        raise ValueError(f"no carry block for {cert.short()}")
    for b in store.at(view, slot):
        if b.parent_cert == cert or (b.parent_cert.block_hash == cert.block_hash
                                     and b.parent_cert.fv == cert.fv
                                     and b.parent_cert.context == cert.context):
            return b
    raise MissingBlock(cert.block_hash)
