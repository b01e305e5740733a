"""Shared replica machinery: view lifecycle, pacemaker wiring, fetch, request
pool, and the ledger hooks every protocol uses.

Handlers never block. They append Send/SetTimer actions to ``self.out`` and
the simulator drains the list after each call.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Any, Optional

from .chain import GENESIS_BLOCK, Block, BlockStore, Transaction
from .identity import (
    GENESIS_CERT,
    KeyRegistry,
    QuorumCertificate,
    cert_order,
    leader_of,
)
from .ledger import ConflictWithCommitted, LedgerPair, ParentMismatch, Response, execute_block
from .messages import (
    FetchRequest,
    FetchResponse,
    Request,
    ResponseMsg,
    TimeoutCert,
    Wish,
)
from .pacemaker import PacemakerState, StaleTC, ViewStep, epoch_leaders, is_tc


@dataclass
class Send:
    dst: int
    msg: Any
    not_before: Optional[float] = None


@dataclass
class SetTimer:
    at: float
    tag: tuple


@dataclass
class ProtocolConfig:
    n: int
    f: int
    delta: float = 1.0
    tau: float = 10.0
    batch_size: int = 100
    synthetic_load: bool = True
    prefix_rule: bool = True
    nogap_rule: bool = True
    fetch_retry_deltas: float = 4.0
    fetch_attempts: int = 12


def hx(digest: Optional[bytes]) -> Optional[str]:
    return None if digest is None else digest.hex()[:16]


class Replica:
    """Base class; protocols override the ``on_*`` and ``handle`` hooks."""

    protocol = "base"
    propose_type = -1
    # half-phases a leader needs after proposing before backups leave the view
    slow_phases = 1

    def __init__(self, rid: int, cfg: ProtocolConfig, registry: KeyRegistry, world, behavior=None):
        self.id = rid
        self.cfg = cfg
        self.n, self.f = cfg.n, cfg.f
        self.q = cfg.n - cfg.f
        self.registry = registry
        self.key = registry.key(rid)
        self.world = world
        from .adversary import CORRECT
        self.behavior = behavior or CORRECT
        self.store = BlockStore()
        self.ledger = LedgerPair(rid)
        self.pm = PacemakerState(cfg.n, cfg.f, cfg.tau, cfg.delta)
        self.view = 0
        self.active = False
        self.out: list = []
        self.buffer: dict[int, list] = defaultdict(list)
        self.parked: dict[bytes, list] = {}
        self.fetching: dict[bytes, int] = {}
        self.pool: dict[tuple, Transaction] = {}
        self.known_tx: set[tuple] = set()
        self.committed_tx: set[tuple] = set()
        self.synthetic_counter = 0
        self.forged: set[bytes] = set()

    # ------------------------------------------------------------------ io
    @property
    def now(self) -> float:
        return self.world.now

    @property
    def faulty(self) -> bool:
        return self.behavior.faulty

    def log(self, kind: str, **data) -> None:
        self.world.log(kind, self.id, **data)

    def send(self, dst: int, msg, not_before: Optional[float] = None) -> None:
        self.out.append(Send(dst, msg, not_before))

    def broadcast(self, msg, include_self: bool = True) -> None:
        for dst in range(1, self.n + 1):
            if dst != self.id or include_self:
                self.out.append(Send(dst, msg))

    def set_timer(self, at: float, tag: tuple) -> None:
        self.out.append(SetTimer(at, tag))

    def leader(self, v: int) -> int:
        return leader_of(v, self.n)

    def is_leader(self, v: Optional[int] = None) -> bool:
        return self.leader(self.view if v is None else v) == self.id

    def slow_margin(self) -> float:
        # proposal must still land before the skewed view timers fire
        return (self.slow_phases + 2) * self.cfg.delta

    def take_actions(self) -> list:
        out, self.out = self.out, []
        return out

    # ----------------------------------------------------------- lifecycle
    def start(self) -> None:
        self.pm.boot(self.now)
        self.enter_view(1, "boot")

    def enter_view(self, v: int, how: str) -> None:
        self.view = v
        self.active = True
        self.pm.view = v
        deadline = self.pm.view_deadline(v)
        if deadline is not None:
            self.set_timer(max(deadline, self.now), ("view", v))
        self.log("enter", view=v, start=self.pm.start_time.get(v), how=how)
        for old in [k for k in self.buffer if k < v]:
            del self.buffer[old]
        self.on_enter(v)
        for src, msg in self.buffer.pop(v, []):
            if self.active and self.view == v:
                self.on_message(src, msg)

    def exit_view(self, v: int, how: str) -> None:
        if not (self.active and self.view == v):
            return
        self.active = False
        self.on_exit(v)
        nxt = v + 1
        if self.pm.completed_view(nxt) == ViewStep.SYNCHRONIZE_EPOCH:
            self.view = nxt
            self.log("wish", view=nxt)
            for dst, share in self.pm.synchronize_epoch(self.key, nxt):
                self.send(dst, Wish(share))
            tc = self.pm.tcs.get(nxt)
            if tc is not None and self.pm.highest_tc < nxt:
                self.apply_tc(tc)
        else:
            self.enter_view(nxt, how)

    # ------------------------------------------------------------ dispatch
    def on_message(self, src: int, msg) -> None:
        if isinstance(msg, Request):
            self.on_request(src, msg)
        elif isinstance(msg, FetchRequest):
            b = self.store.get(msg.digest)
            if b is not None:
                self.send(src, FetchResponse(msg.digest, b))
        elif isinstance(msg, FetchResponse):
            self.on_fetch_response(msg)
        elif isinstance(msg, Wish):
            tc = self.pm.on_wish(msg.share, self.registry)
            if tc is not None:
                self.log("tc", view=tc.view)
                self.apply_tc(tc)
        elif isinstance(msg, TimeoutCert):
            if is_tc(msg.tc) and self.registry.verify(msg.tc):
                self.apply_tc(msg.tc)
        else:
            v = msg.view
            if v > self.view or (v == self.view and not self.active):
                self.buffer[v].append((src, msg))
            elif v < self.view:
                self.on_past(src, msg)
            else:
                self.handle(src, msg)

    def on_timer(self, tag: tuple) -> None:
        kind = tag[0]
        if kind == "view":
            v = tag[1]
            if self.active and self.view == v:
                self.log("timeout", view=v)
                self.on_timeout(v)
                self.exit_view(v, "timer")
        elif kind == "fetch":
            self.retry_fetch(tag[1])
        else:
            self.on_protocol_timer(tag)

    def apply_tc(self, tc: QuorumCertificate) -> None:
        try:
            leaders = self.pm.on_timeout_certificate(tc, self.now)
        except StaleTC:
            return
        if self.id in leaders:
            self.broadcast(TimeoutCert(tc), include_self=False)
        else:
            for dst in leaders:
                self.send(dst, TimeoutCert(tc))
        if self.active:
            # jumping ahead: leave the current view as on a timeout
            old = self.view
            self.active = False
            self.log("abandon", view=old, target=tc.view)
            self.on_abandon(old, tc.view)
            self.on_exit(old)
        self.enter_view(tc.view, "tc")

    # ------------------------------------------------------ protocol hooks
    def on_enter(self, v: int) -> None:
        pass

    def on_exit(self, v: int) -> None:
        pass

    def on_timeout(self, v: int) -> None:
        pass

    def on_abandon(self, v: int, target: int) -> None:
        pass

    def on_past(self, src: int, msg) -> None:
        pass

    def handle(self, src: int, msg) -> None:
        pass

    def on_protocol_timer(self, tag: tuple) -> None:
        pass

    # --------------------------------------------------------------- fetch
    def missing_for(self, digest: bytes) -> Optional[bytes]:
        """First block missing on the ledger-parent walk from ``digest`` down
        to the committed prefix, or None when the chain is complete."""
        head_key = self.ledger.head.key
        h = digest
        committed = self.ledger.committed_hashes
        while h not in committed:
            b = self.store.get(h)
            if b is None:
                return h
            if b.key <= head_key:
                return None
            h = b.parent_hash
        return None

    def park(self, digest: bytes, src: int, msg) -> None:
        self.parked.setdefault(digest, []).append((src, msg))
        if digest not in self.fetching:
            self.fetching[digest] = 0
            self.log("fetch", hash=hx(digest))
            self.broadcast(FetchRequest(digest), include_self=False)
            self.set_timer(self.now + self.cfg.fetch_retry_deltas * self.cfg.delta, ("fetch", digest))

    def retry_fetch(self, digest: bytes) -> None:
        if digest not in self.fetching:
            return
        if digest in self.store:
            self.fetching.pop(digest, None)
            return
        self.fetching[digest] += 1
        if self.fetching[digest] >= self.cfg.fetch_attempts:
            self.fetching.pop(digest)
            self.parked.pop(digest, None)
            self.log("fetch_timeout", hash=hx(digest))
            return
        self.broadcast(FetchRequest(digest), include_self=False)
        self.set_timer(self.now + self.cfg.fetch_retry_deltas * self.cfg.delta, ("fetch", digest))

    def on_fetch_response(self, msg: FetchResponse) -> None:
        if msg.block.hash != msg.digest:
            return
        if msg.digest not in self.fetching and msg.digest in self.store:
            return
        self.fetching.pop(msg.digest, None)
        self.store.add(msg.block)
        self.on_block_stored(msg.block)
        for src, m in self.parked.pop(msg.digest, []):
            self.on_message(src, m)

    def on_block_stored(self, block: Block) -> None:
        pass

    # ------------------------------------------------------------- clients
    def on_request(self, src: int, req: Request) -> None:
        tx = req.tx
        k = (tx.client, tx.tx_id)
        if k in self.known_tx:
            return
        self.known_tx.add(k)
        if k not in self.committed_tx:
            self.pool[k] = tx
        if not req.gossip:
            self.broadcast(Request(tx, True), include_self=False)

    def make_payload(self, parent_hash: bytes) -> tuple:
        exclude = set()
        committed = self.ledger.committed_hashes
        head_key = self.ledger.head.key
        h = parent_hash
        while h not in committed:
            b = self.store.get(h)
            if b is None or b.key <= head_key:
                break
            for tx in b.payload:
                if tx.client:
                    exclude.add((tx.client, tx.tx_id))
            h = b.parent_hash
        txs = []
        limit = self.cfg.batch_size
        for k, tx in self.pool.items():
            if len(txs) >= limit:
                break
            if k not in exclude:
                txs.append(tx)
        if self.cfg.synthetic_load:
            while len(txs) < limit:
                self.synthetic_counter += 1
                c = self.synthetic_counter
                txs.append(Transaction((self.id << 40) | c, 0, b"s%d" % (c % 512),
                                       b"%d:%d" % (self.id, c)))
        return tuple(txs)

    def send_responses(self, responses: list[Response]) -> None:
        for r in responses:
            self.send(r.client, ResponseMsg(r))

    # -------------------------------------------------------------- ledger
    def log_propose(self, block: Block, extra: Optional[dict] = None) -> None:
        data = dict(view=block.view, slot=block.slot, hash=hx(block.hash),
                    parent=hx(block.parent_cert.block_hash), pview=block.parent_cert.view,
                    pslot=block.parent_cert.slot, carry=hx(block.carry_hash),
                    txs=[[t.client, t.tx_id] for t in block.payload if t.client],
                    ntx=len(block.payload))
        if extra:
            data.update(extra)
        self.log("propose", **data)

    def commit(self, block: Block) -> int:
        """Commit ``block`` and its uncommitted ancestry; returns blocks added."""
        if self.ledger.is_committed(block.hash):
            return 0
        before = self.ledger.height
        overlay_before = len(self.ledger.overlay)
        rb_before = self.ledger.rollbacks
        try:
            responses = self.ledger.commit_through(block, self.store)
        except ConflictWithCommitted as e:
            self.log("conflict", hash=hx(block.hash), view=block.view, slot=block.slot, err=str(e))
            return 0
        if self.ledger.rollbacks != rb_before:
            self.log("rollback", discarded=overlay_before, on="commit")
        for pos, b, res in self.ledger.committed[before + 1:]:
            self.log("commit", pos=pos, hash=hx(b.hash), view=b.view, slot=b.slot,
                     digest=hx(res.digest), ntx=len(b.payload),
                     txs=[[t.client, t.tx_id] for t in b.payload if t.client])
            for tx in b.payload:
                if tx.client:
                    k = (tx.client, tx.tx_id)
                    self.committed_tx.add(k)
                    self.pool.pop(k, None)
        self.send_responses(responses)
        return self.ledger.height - before

    def speculate(self, block: Block) -> None:
        """Speculatively execute ``block`` and any uncommitted ancestors not
        yet in the overlay, rolling back first if the overlay diverges."""
        if self.ledger.is_committed(block.hash) or self.ledger.is_speculated(block.hash):
            return
        try:
            chain = self.ledger.chain_to_head(block, self.store)
        except ConflictWithCommitted as e:
            self.log("conflict", hash=hx(block.hash), view=block.view, slot=block.slot, err=str(e))
            return
        overlay = self.ledger.overlay
        keep = 0
        while keep < len(overlay) and keep < len(chain) and overlay[keep][0].hash == chain[keep].hash:
            keep += 1
        if keep < len(overlay):
            n = self.ledger.rollback()
            self.log("rollback", discarded=n, on="speculate", to=hx(block.hash))
            keep = 0
        for b in chain[keep:]:
            try:
                responses = self.ledger.speculate(b)
            except ParentMismatch:
                return
            self.log("speculate", hash=hx(b.hash), view=b.view, slot=b.slot,
                     depth=len(self.ledger.overlay))
            self.send_responses(responses)

    # ----------------------------------------------------------- adversary
    def forge_for(self, block_hash: bytes) -> None:
        """Faulty helper: answer clients for a certified block and its
        uncommitted ancestry as if it had been speculated."""
        if block_hash in self.forged or block_hash not in self.store:
            return
        block = self.store.get(block_hash)
        try:
            chain = self.ledger.chain_to_head(block, self.store)
        except Exception:
            return
        from .ledger import _Layer
        state = _Layer(self.ledger.state)
        digest = self.ledger.digest
        for b in chain:
            res = execute_block(state, b, digest)
            for k, v in res.writes:
                dict.__setitem__(state, k, v)
            digest = res.digest
            if b.hash in self.forged:
                continue
            self.forged.add(b.hash)
            out = []
            for i, tx in enumerate(b.payload):
                if tx.client:
                    out.append(Response(tx.tx_id, tx.client, b.view, b.slot,
                                        res.result_bytes(i), self.id, True))
            self.send_responses(out)

    def learned_cert(self, cert: QuorumCertificate) -> None:
        coord = getattr(self.behavior, "coord", None)
        if self.behavior.faulty and coord is not None:
            coord.record(cert)
        if self.behavior.forge_responses and not cert.genesis:
            self.forge_for(cert.block_hash)

    def verify(self, cert: QuorumCertificate) -> bool:
        ok = self.registry.verify(cert)
        if ok:
            self.learned_cert(cert)
        return ok


def higher(a: QuorumCertificate, b: QuorumCertificate) -> QuorumCertificate:
    return a if cert_order(a, b) >= 0 else b


__all__ = [
    "Replica", "ProtocolConfig", "Send", "SetTimer", "hx", "higher",
    "GENESIS_BLOCK", "GENESIS_CERT", "epoch_leaders",
]
