"""Committed global-ledger, speculative overlay, execution and rollback."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Mapping, Optional

from .chain import GENESIS_BLOCK, Block, BlockStore, MissingBlock


class ConflictWithCommitted(Exception):
    pass


class ParentMismatch(Exception):
    pass


def _item(key: bytes, value: bytes) -> int:
    h = hashlib.sha256(struct.pack("<I", len(key)) + key + value).digest()
    return int.from_bytes(h, "little")


def state_digest(state: Mapping[bytes, bytes]) -> bytes:
    """Order-independent digest of a key-value map (XOR of item hashes)."""
    acc = 0
    for k, v in state.items():
        acc ^= _item(k, v)
    return acc.to_bytes(32, "little")


@dataclass(frozen=True)
class ExecResult:
    results: tuple  # (key, prior value or None) per transaction
    digest: bytes   # post-state digest
    writes: tuple   # (key, value) in payload order

    def result_bytes(self, i: int) -> bytes:
        prior = self.results[i][1]
        return (b"\x00" if prior is None else b"\x01" + prior) + self.digest


def execute_block(pre_state: Mapping[bytes, bytes], block: Block,
                  pre_digest: Optional[bytes] = None) -> ExecResult:
    """Apply the block's writes in order without mutating ``pre_state``."""
    acc = int.from_bytes(pre_digest if pre_digest is not None else state_digest(pre_state), "little")
    local: dict[bytes, bytes] = {}
    results = []
    writes = []
    for tx in block.payload:
        prior = local[tx.key] if tx.key in local else pre_state.get(tx.key)
        if prior is not None:
            acc ^= _item(tx.key, prior)
        acc ^= _item(tx.key, tx.value)
        local[tx.key] = tx.value
        results.append((tx.key, prior))
        writes.append((tx.key, tx.value))
    return ExecResult(tuple(results), acc.to_bytes(32, "little"), tuple(writes))


@dataclass(frozen=True)
class Response:
    tx_id: int
    client: int
    view: int
    slot: int
    result: bytes
    responder: int
    speculative: bool

    @property
    def fingerprint(self) -> tuple:
        return (self.view, self.slot, self.result)

    def encode(self) -> bytes:
        return (struct.pack("<QQQ", self.tx_id, self.view, self.slot)
                + struct.pack("<I", len(self.result)) + self.result
                + (b"\x01" if self.speculative else b"\x00"))


class _Layer(dict):
    """State view that reads through to a base map."""

    def __init__(self, base: dict):
        super().__init__()
        self.base = base

    def get(self, key, default=None):
        if dict.__contains__(self, key):
            return dict.__getitem__(self, key)
        return self.base.get(key, default)


class LedgerPair:
    """GlobalLedger plus LocalOverlay for one replica."""

    def __init__(self, replica: int = 0):
        self.replica = replica
        self.committed: list[tuple[int, Block, ExecResult]] = [
            (0, GENESIS_BLOCK, ExecResult((), state_digest({}), ()))]
        self.committed_hashes: set[bytes] = {GENESIS_BLOCK.hash}
        self.state: dict[bytes, bytes] = {}
        self.digest = state_digest({})
        self.overlay: list[tuple[Block, ExecResult]] = []
        self.overlay_state = _Layer(self.state)
        self.overlay_digest = self.digest
        self.rollbacks = 0

    # --- views -----------------------------------------------------------
    @property
    def head(self) -> Block:
        return self.committed[-1][1]

    @property
    def height(self) -> int:
        return self.committed[-1][0]

    @property
    def tip(self) -> Block:
        return self.overlay[-1][0] if self.overlay else self.head

    def is_committed(self, digest: bytes) -> bool:
        return digest in self.committed_hashes

    def is_speculated(self, digest: bytes) -> bool:
        return any(b.hash == digest for b, _ in self.overlay)

    # --- operations ------------------------------------------------------
    def _responses(self, block: Block, res: ExecResult, speculative: bool) -> list[Response]:
        out = []
        for i, tx in enumerate(block.payload):
            if tx.client == 0:
                continue
            out.append(Response(tx.tx_id, tx.client, block.view, block.slot,
                                res.result_bytes(i), self.replica, speculative))
        return out

    def chain_to_head(self, block: Block, store: BlockStore) -> list[Block]:
        """Uncommitted ancestors of ``block`` plus the block, oldest first."""
        chain = []
        head = self.head
        b = block
        while b.hash != head.hash:
            if b.hash in self.committed_hashes or b.key <= head.key:
                raise ConflictWithCommitted(f"{b!r} does not extend committed head {head!r}")
            chain.append(b)
            b = store.require(b.parent_hash)
        chain.reverse()
        return chain

    def commit_through(self, block: Block, store: BlockStore) -> list[Response]:
        if block.hash in self.committed_hashes:
            return []
        chain = self.chain_to_head(block, store)
        reuse = 0
        while (reuse < len(chain) and reuse < len(self.overlay)
               and self.overlay[reuse][0].hash == chain[reuse].hash):
            reuse += 1
        out: list[Response] = []
        for i, b in enumerate(chain):
            if i < reuse:
                res = self.overlay[i][1]
            else:
                res = execute_block(self.state, b, self.digest)
                out.extend(self._responses(b, res, False))
            for k, v in res.writes:
                self.state[k] = v
            self.digest = res.digest
            self.committed.append((self.height + 1, b, res))
            self.committed_hashes.add(b.hash)
        if reuse == len(chain) and reuse <= len(self.overlay):
            self.overlay = self.overlay[reuse:]
            if not self.overlay:
                self._reset_overlay()
        else:
            self.rollbacks += 1 if self.overlay[reuse:] else 0
            self._reset_overlay()
        return out

    def _reset_overlay(self) -> None:
        self.overlay = []
        self.overlay_state = _Layer(self.state)
        self.overlay_digest = self.digest

    def speculate(self, block: Block) -> list[Response]:
        if block.parent_hash != self.tip.hash:
            raise ParentMismatch(f"{block!r} does not extend {self.tip!r}")
        res = execute_block(self.overlay_state, block, self.overlay_digest)
        for k, v in res.writes:
            dict.__setitem__(self.overlay_state, k, v)
        self.overlay_digest = res.digest
        self.overlay.append((block, res))
        return self._responses(block, res, True)

    def rollback(self) -> int:
        count = len(self.overlay)
        if count:
            self.rollbacks += 1
        self._reset_overlay()
        return count
