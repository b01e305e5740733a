"""Basic (non-streamlined) HotStuff-1.

Two phases per view. The leader gathers ProposeVotes into a prepare
certificate C_v and broadcasts it; backups speculate on B_v, vote to commit
inside their NewView, and the next leader turns those shares into CC_v.
"""

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
from .messages import (
    BASIC_NEWVIEW,
    BASIC_PREPARE,
    BASIC_PROPOSE,
    BASIC_VOTE,
    CertMsg,
    NewView,
    Propose,
    Vote,
)
from .replica import Replica, hx


class BasicReplica(Replica):
    protocol = "basic-hs1"
    propose_type = BASIC_PROPOSE
    vote_type = BASIC_VOTE
    prepare_type = BASIC_PREPARE
    newview_type = BASIC_NEWVIEW
    slow_phases = 3

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.high: QuorumCertificate = GENESIS_CERT
        self.high_commit: Optional[QuorumCertificate] = None
        self._reset_view_state()

    def _reset_view_state(self):
        self.nv: dict[int, NewView] = {}
        self.cshares: dict[tuple, dict] = {}
        self.best: QuorumCertificate = self.high
        self.proposed = False
        self.share_fired = False
        self.proposal: Optional[Propose] = None
        self.votes: dict[tuple, dict] = {}
        self.prepared: Optional[QuorumCertificate] = None
        self.pending_prepare: Optional[CertMsg] = None

    @property
    def v_lp(self) -> int:
        return self.high.view

    def adopt(self, cert: QuorumCertificate) -> None:
        if cert_order(cert, self.high) > 0:
            self.high = cert

    # ------------------------------------------------------------ leader
    def on_enter(self, v: int) -> None:
        self._reset_view_state()
        if self.is_leader(v):
            self.set_timer(self.pm.share_timer(v), ("share", v))
            if v == 1:
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
        if share is not None and share.signer == src and share.context == VoteContext.COMMIT \
                and share.view == self.view - 1 and self.registry.verify_share(share):
            bucket = self.cshares.setdefault(share.tuple, {})
            bucket[src] = share
            for s in self.behavior.extra_shares(self, share):
                bucket.setdefault(s.signer, s)
            if len(bucket) >= self.q and (self.high_commit is None or self.high_commit.view < share.view):
                try:
                    cc = assemble_certificate(list(bucket.values()), self.n, self.f)
                except InsufficientShares:
                    pass
                else:
                    self.high_commit = cc
                    self.log("cert", view=cc.view, slot=1, hash=hx(cc.block_hash), ctx="commit")
                    self.learned_cert(cc)
        self.try_propose()

    def try_propose(self) -> None:
        if self.proposed or not self.active or not self.is_leader():
            return
        v = self.view
        have_prev = self.best.view == v - 1 or self.high.view == v - 1
        ready = len(self.nv) >= self.q and (
            have_prev or len(self.nv) == self.n or self.share_fired or self.behavior.eager(self))
        if not ready:
            return
        self.proposed = True
        default = self.best if cert_order(self.best, self.high) >= 0 else self.high
        for parent, recipients in self.behavior.plan_proposals(self, default, list(self.nv.values())):
            self.propose(parent, recipients)

    def propose(self, parent: QuorumCertificate, recipients=None) -> Block:
        self.proposed = True
        v = self.view
        block = Block(v, 1, parent, self.make_payload(parent.block_hash))
        self.store.add(block)
        self.log_propose(block)
        msg = Propose(self.propose_type, v, block, parent, self.high_commit)
        if recipients is None:
            self.broadcast(msg)
        else:
            for dst in recipients:
                self.send(dst, msg)
        return block

    def on_vote(self, src: int, msg: Vote) -> None:
        share = msg.share
        if not self.is_leader() or self.prepared is not None or share.signer != src:
            return
        if share.context != VoteContext.PREPARE or share.view != self.view or share.slot != 1:
            return
        if not self.registry.verify_share(share):
            return
        bucket = self.votes.setdefault(share.tuple, {})
        bucket[src] = share
        for s in self.behavior.extra_shares(self, share):
            bucket.setdefault(s.signer, s)
        if len(bucket) >= self.q:
            try:
                cert = assemble_certificate(list(bucket.values()), self.n, self.f)
            except InsufficientShares:
                return
            self.prepared = cert
            self.log("cert", view=cert.view, slot=1, hash=hx(cert.block_hash), ctx="prepare")
            self.learned_cert(cert)
            self.on_certified(cert)

    def on_certified(self, cert: QuorumCertificate) -> None:
        self.broadcast(CertMsg(self.prepare_type, cert.view, cert))

    # ------------------------------------------------------------ backup
    def handle(self, src: int, msg) -> None:
        if isinstance(msg, Propose):
            self.on_propose(src, msg)
        elif isinstance(msg, Vote):
            self.on_vote(src, msg)
        elif isinstance(msg, CertMsg):
            self.on_certmsg(src, msg)
        elif isinstance(msg, NewView):
            self.on_newview(src, msg)

    def on_certmsg(self, src: int, msg: CertMsg) -> None:
        if msg.mtype == self.prepare_type and src == self.leader(self.view):
            self.on_prepare(src, msg)

    def on_past(self, src: int, msg) -> None:
        # late Prepares are ignored; late proposals only feed the block store
        if isinstance(msg, Propose) and msg.block.parent_cert == msg.cert and self.verify(msg.cert):
            self.store.add(msg.block)

    def valid_proposal(self, src: int, msg: Propose) -> bool:
        b = msg.block
        if not (src == self.leader(msg.view) and b.view == msg.view and b.slot == 1
                and b.parent_cert == msg.cert and b.carry_hash is None
                and msg.cert.view < msg.view and self.verify(msg.cert)):
            return False
        cc = msg.commit_cert
        return cc is None or (cc.context == VoteContext.COMMIT and self.verify(cc))

    def on_propose(self, src: int, msg: Propose) -> None:
        v = self.view
        if not self.valid_proposal(src, msg):
            return
        block = msg.block
        if self.proposal is not None:
            if self.proposal.block.hash != block.hash:
                self.log("equivocation", view=v, hash=hx(block.hash))
            return
        self.store.add(block)
        missing = self.missing_for(block.parent_hash)
        if missing is None and msg.commit_cert is not None:
            missing = self.missing_for(msg.commit_cert.block_hash)
        if missing is not None:
            self.park(missing, src, msg)
            return
        self.proposal = msg
        cc = msg.commit_cert
        # traditional-commit rule
        if cc is not None:
            if self.high_commit is None or cert_order(cc, self.high_commit) > 0:
                self.high_commit = cc
            self.commit(self.store.get(cc.block_hash))
        cw = msg.cert
        if not self.cfg.nogap_rule and not cw.genesis:
            # test hook: speculate on the proposal's certificate regardless of
            # the view in which it was formed
            bw = self.store.get(cw.block_hash)
            if self.ledger.is_committed(bw.parent_hash) or not self.cfg.prefix_rule:
                self.speculate(bw)
        if cw.view >= self.v_lp or self.behavior.collude_with(self, src):
            self.adopt(cw)
            share = sign_vote(self.key, VoteContext.PREPARE, v, 1, block.hash)
            self.log("vote", view=v, slot=1, hash=hx(block.hash))
            self.send(self.leader(v), Vote(self.vote_type, v, share))
        else:
            self.log("ignore", view=v, hash=hx(block.hash), w=cw.view, vlp=self.v_lp)
        pending, self.pending_prepare = self.pending_prepare, None
        if pending is not None and self.active and self.view == v:
            self.on_certmsg(self.leader(v), pending)

    def prepare_ok(self, msg: CertMsg) -> bool:
        c = msg.cert
        if c.view != self.view or c.context != VoteContext.PREPARE or c.slot != 1:
            return False
        if self.proposal is None:
            # reordered: hold until the proposal shows up
            self.pending_prepare = msg
            return False
        if self.proposal.block.hash != c.block_hash:
            return False
        return self.verify(c)

    def on_prepare(self, src: int, msg: CertMsg) -> None:
        if not self.prepare_ok(msg):
            return
        v = self.view
        cv = msg.cert
        self.adopt(cv)
        bv = self.store.get(cv.block_hash)
        # prefix-commit rule: C_v extends C_{v-1}
        if bv.parent_cert.view == v - 1:
            self.commit(self.store.get(bv.parent_hash))
        # C_v was formed in this very view, so the no-gap rule holds here
        if self.ledger.is_committed(bv.parent_hash) or not self.cfg.prefix_rule:
            self.speculate(bv)
        share = sign_vote(self.key, VoteContext.COMMIT, v, 1, bv.hash)
        self.send(self.leader(v + 1), NewView(self.newview_type, v + 1, cv, share))
        self.exit_view(v, "progress")

    def on_timeout(self, v: int) -> None:
        self.send(self.leader(v + 1), NewView(self.newview_type, v + 1, self.high, None))

    def on_abandon(self, v: int, target: int) -> None:
        self.send(self.leader(target), NewView(self.newview_type, target, self.high, None))
