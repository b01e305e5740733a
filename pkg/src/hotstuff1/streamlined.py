"""Streamlined HotStuff-1: one phase per view, the next leader forms the
certificate from NewView shares, speculation on the previous view's block."""

from __future__ import annotations

from typing import Optional

from .identity import (
    GENESIS_CERT,
    InsufficientShares,
    QuorumCertificate,
    VoteContext,
    assemble_certificate,
    cert_order,
    sign_vote,
)
from .chain import Block
from .messages import STREAM_NEWVIEW, STREAM_PROPOSE, NewView, Propose
from .replica import Replica, hx


class StreamlinedReplica(Replica):
    protocol = "streamlined-hs1"
    propose_type = STREAM_PROPOSE
    newview_type = STREAM_NEWVIEW
    slow_phases = 1

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.high: QuorumCertificate = GENESIS_CERT
        self._reset_view_state()

    def _reset_view_state(self):
        self.seen_proposal: Optional[bytes] = None
        self.nv: dict[int, NewView] = {}
        self.shares: dict[tuple, dict] = {}
        self.formed: Optional[QuorumCertificate] = None
        self.best: QuorumCertificate = self.high
        self.proposed = False
        self.share_fired = False

    @property
    def v_lp(self) -> int:
        return self.high.view

    # ------------------------------------------------------------ leader
    def on_enter(self, v: int) -> None:
        self._reset_view_state()
        if self.is_leader(v):
            self.set_timer(self.pm.share_timer(v), ("share", v))
            if v == 1:
                self.formed = GENESIS_CERT
                self.proposed = True
                for parent, recipients in self.behavior.plan_proposals(self, GENESIS_CERT, []):
                    self.propose(parent, recipients)

    def on_protocol_timer(self, tag: tuple) -> None:
        if tag[0] == "share" and tag[1] == self.view and self.active:
            self.share_fired = True
            self.log("share_timer", view=self.view, senders=sorted(self.nv))
            self.try_propose()

    def on_newview(self, src: int, msg: NewView) -> None:
        if not self.is_leader() or src in self.nv:
            return
        if not self.verify(msg.cert):
            return
        self.nv[src] = msg
        if cert_order(msg.cert, self.best) > 0:
            self.best = msg.cert
        share = msg.share
        if share is not None and self.formed is None and share.signer == src \
                and share.context == VoteContext.PREPARE and share.view == self.view - 1 \
                and self.registry.verify_share(share):
            bucket = self.shares.setdefault(share.tuple, {})
            bucket[src] = share
            extra = self.behavior.extra_shares(self, share)
            for s in extra:
                bucket.setdefault(s.signer, s)
            if len(bucket) >= self.q and not self.behavior.skip_prev_cert(self):
                try:
                    self.formed = assemble_certificate(list(bucket.values()), self.n, self.f)
                except InsufficientShares:
                    pass
                else:
                    self.log("cert", view=self.formed.view, slot=1, hash=hx(self.formed.block_hash),
                             ctx="prepare")
                    self.learned_cert(self.formed)
        self.try_propose()

    def try_propose(self) -> None:
        if self.proposed or not self.active or not self.is_leader():
            return
        ready = len(self.nv) >= self.q and (
            self.formed is not None or len(self.nv) == self.n or self.share_fired
            or self.behavior.eager(self))
        if not ready:
            return
        self.proposed = True
        default = self.formed if self.formed is not None else self.max_known()
        for parent, recipients in self.behavior.plan_proposals(self, default, list(self.nv.values())):
            self.propose(parent, recipients)

    def max_known(self) -> QuorumCertificate:
        best = self.best
        if cert_order(self.high, best) > 0:
            best = self.high
        return best

    def propose(self, parent: QuorumCertificate, recipients=None) -> Block:
        self.proposed = True
        v = self.view
        block = Block(v, 1, parent, self.make_payload(parent.block_hash))
        self.store.add(block)
        self.log_propose(block)
        msg = Propose(self.propose_type, v, block, parent)
        if recipients is None:
            self.broadcast(msg)
        else:
            for dst in recipients:
                self.send(dst, msg)
        return block

    # ------------------------------------------------------------ backup
    def handle(self, src: int, msg) -> None:
        if isinstance(msg, Propose):
            self.on_propose(src, msg)
        elif isinstance(msg, NewView):
            self.on_newview(src, msg)

    def on_past(self, src: int, msg) -> None:
        if isinstance(msg, Propose) and msg.block.parent_cert == msg.cert and self.verify(msg.cert):
            self.store.add(msg.block)
            # the commit rule only needs certificates, so a late proposal still counts
            if self.missing_for(msg.block.parent_hash) is None:
                self.apply_commit_rule(msg.cert)

    def apply_commit_rule(self, cw: QuorumCertificate) -> None:
        """Commit B_{w-1} when C_w extends C_{w-1}."""
        if cw.genesis:
            return
        bw = self.store.get(cw.block_hash)
        if bw.parent_cert.view == cw.view - 1:
            self.commit(self.store.get(bw.parent_hash))

    def valid_proposal(self, src: int, msg: Propose) -> bool:
        b = msg.block
        return (src == self.leader(msg.view) and b.view == msg.view and b.slot == 1
                and b.parent_cert == msg.cert and b.carry_hash is None
                and msg.cert.view < msg.view
                and self.verify(msg.cert))

    def on_propose(self, src: int, msg: Propose) -> None:
        v = self.view
        if not self.valid_proposal(src, msg):
            return
        block = msg.block
        if self.seen_proposal is not None:
            if self.seen_proposal != block.hash:
                self.log("equivocation", view=v, hash=hx(block.hash))
            return
        self.store.add(block)
        missing = self.missing_for(block.parent_hash)
        if missing is not None:
            self.park(missing, src, msg)
            return
        self.seen_proposal = block.hash
        cw = msg.cert
        w = cw.view
        bw = self.store.get(cw.block_hash)
        self.apply_commit_rule(cw)
        # speculation gates
        nogap = (w == v - 1) or not self.cfg.nogap_rule
        prefix = self.ledger.is_committed(bw.parent_hash) or not self.cfg.prefix_rule
        if not cw.genesis and nogap and prefix:
            self.speculate(bw)
        colluding = self.behavior.collude_with(self, src)
        if w >= self.v_lp or colluding:
            if cert_order(cw, self.high) > 0:
                self.high = cw
            share = sign_vote(self.key, VoteContext.PREPARE, v, 1, block.hash)
            self.log("vote", view=v, slot=1, hash=hx(block.hash))
            self.send(self.leader(v + 1), NewView(self.newview_type, v + 1, cw, share))
        else:
            self.send(self.leader(v + 1), NewView(self.newview_type, v + 1, self.high, None))
        self.exit_view(v, "progress")

    def on_timeout(self, v: int) -> None:
        self.send(self.leader(v + 1), NewView(self.newview_type, v + 1, self.high, None))

    def on_abandon(self, v: int, target: int) -> None:
        self.send(self.leader(target), NewView(self.newview_type, target, self.high, None))
