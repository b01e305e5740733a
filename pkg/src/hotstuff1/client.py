"""Clients: request submission, response matching and early finality."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .chain import Transaction
from .ledger import Response
from .messages import Request, ResponseMsg
from .replica import Send, SetTimer, hx

CLIENT_BASE = 1000


class DuplicateTx(Exception):
    pass


@dataclass
class WorkloadConfig:
    clients: int = 1
    txs_per_client: int = 8
    interval: float = 7.0
    start: float = 0.5
    keyspace: int = 16
    retransmit: Optional[float] = None  # default 4·tau
    submit_until: Optional[float] = None


@dataclass
class ClientState:
    pending: dict = field(default_factory=dict)     # tx_id -> submit time
    responses: dict = field(default_factory=dict)   # tx_id -> fingerprint -> set of responders
    finalized: dict = field(default_factory=dict)   # tx_id -> (time, view, slot, result)


class Client:
    def __init__(self, cid: int, n: int, quorum: int, world, workload: WorkloadConfig,
                 rng, tau: float):
        self.id = cid
        self.n = n
        self.quorum = quorum
        self.world = world
        self.workload = workload
        self.rng = rng
        self.state = ClientState()
        self.out: list = []
        self.counter = 0
        self.rr = (cid - CLIENT_BASE) % n
        self.retransmit = workload.retransmit or 4 * tau
        self.txs: dict[int, Transaction] = {}

    @property
    def now(self) -> float:
        return self.world.now

    def take_actions(self) -> list:
        out, self.out = self.out, []
        return out

    def start(self) -> None:
        if self.workload.txs_per_client > 0:
            self.out.append(SetTimer(self.workload.start, ("submit",)))

    def new_tx(self) -> Transaction:
        self.counter += 1
        key = b"k%d" % self.rng.randrange(self.workload.keyspace)
        return Transaction(self.counter, self.id, key, b"c%d-%d" % (self.id, self.counter))

    def submit(self, tx: Transaction) -> None:
        if tx.tx_id in self.state.pending:
            raise DuplicateTx(tx.tx_id)
        self.state.pending[tx.tx_id] = self.now
        self.txs[tx.tx_id] = tx
        dst = self.rr + 1
        self.rr = (self.rr + 1) % self.n
        self.world.log("submit", self.id, tx=tx.tx_id, to=dst)
        self.out.append(Send(dst, Request(tx)))
        self.out.append(SetTimer(self.now + self.retransmit, ("retx", tx.tx_id)))

    def preload(self, tx: Transaction) -> None:
        """Register ``tx`` as submitted without sending it (scripted runs
        place it in a chosen replica's pool directly)."""
        if tx.tx_id in self.state.pending:
            raise DuplicateTx(tx.tx_id)
        self.state.pending[tx.tx_id] = self.now
        self.txs[tx.tx_id] = tx
        self.world.log("submit", self.id, tx=tx.tx_id, to=0)

    def on_timer(self, tag: tuple) -> None:
        if tag[0] == "submit":
            self.submit(self.new_tx())
            until = self.workload.submit_until
            nxt = self.now + self.workload.interval
            if self.counter < self.workload.txs_per_client and (until is None or nxt <= until):
                self.out.append(SetTimer(nxt, ("submit",)))
        elif tag[0] == "retx":
            tx_id = tag[1]
            if tx_id in self.state.finalized:
                return
            self.world.log("retransmit", self.id, tx=tx_id)
            for dst in range(1, self.n + 1):
                self.out.append(Send(dst, Request(self.txs[tx_id])))
            self.out.append(SetTimer(self.now + self.retransmit, ("retx", tx_id)))

    def on_message(self, src: int, msg) -> None:
        if isinstance(msg, ResponseMsg):
            self.on_response(src, msg.response)

    def on_response(self, src: int, resp: Response) -> bool:
        """Count ``resp`` for responder ``src``; True when it finalizes the tx."""
        st = self.state
        if resp.tx_id not in st.pending or resp.tx_id in st.finalized:
            return False
        buckets = st.responses.setdefault(resp.tx_id, {})
        fp = resp.fingerprint
        voters = buckets.setdefault(fp, set())
        voters.add(src)
        if len(voters) >= self.quorum:
            st.finalized[resp.tx_id] = (self.now, resp.view, resp.slot, resp.result)
            self.world.log("finalize", self.id, tx=resp.tx_id, view=resp.view, slot=resp.slot,
                           digest=hx(resp.result[-32:]), submitted=st.pending[resp.tx_id],
                           latency=self.now - st.pending[resp.tx_id])
            return True
        return False
