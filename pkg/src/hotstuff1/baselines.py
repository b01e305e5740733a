"""Baselines on the same substrate: HotStuff-2 (non-streamlined, two and a
half phases inside one view) and chained HotStuff (three-chain commit).

Both respond to clients only after commit, so their clients need f+1
matching responses.
"""

from __future__ import annotations

from typing import Optional

from .basic import BasicReplica
from .chain import MissingBlock, extends
from .identity import (
    GENESIS_CERT,
    InsufficientShares,
    QuorumCertificate,
    VoteContext,
    assemble_certificate,
    cert_order,
    sign_vote,
)
from .messages import (
    HS_COMMIT,
    HS_NEWVIEW,
    HS_PREPARE,
    HS_PROPOSE,
    HS_VOTE,
    HS_VOTE2,
    CertMsg,
    NewView,
    Propose,
    Vote,
)
from .replica import hx
from .streamlined import StreamlinedReplica


class HotStuff2Replica(BasicReplica):
    """Propose, Vote, Prepare (lock), Vote2, Commit (execute), NewView."""

    protocol = "hotstuff2"
    propose_type = HS_PROPOSE
    vote_type = HS_VOTE
    prepare_type = HS_PREPARE
    newview_type = HS_NEWVIEW
    slow_phases = 5

    def _reset_view_state(self):
        super()._reset_view_state()
        self.locked_in_view = False
        self.votes2: dict[tuple, dict] = {}
        self.committed_cert: Optional[QuorumCertificate] = None
        self.pending_commit: Optional[CertMsg] = None

    def on_vote(self, src: int, msg: Vote) -> None:
        if msg.mtype == HS_VOTE2:
            self.on_vote2(src, msg)
        else:
            super().on_vote(src, msg)

    def on_vote2(self, src: int, msg: Vote) -> None:
        share = msg.share
        if not self.is_leader() or self.committed_cert is not None or share.signer != src:
            return
        if self.prepared is None or share.context != VoteContext.COMMIT or share.view != self.view \
                or share.block_hash != self.prepared.block_hash:
            return
        if not self.registry.verify_share(share):
            return
        bucket = self.votes2.setdefault(share.tuple, {})
        bucket[src] = share
        for s in self.behavior.extra_shares(self, share):
            bucket.setdefault(s.signer, s)
        if len(bucket) >= self.q:
            try:
                cc = assemble_certificate(list(bucket.values()), self.n, self.f)
            except InsufficientShares:
                return
            self.committed_cert = cc
            self.log("cert", view=cc.view, slot=1, hash=hx(cc.block_hash), ctx="commit")
            self.learned_cert(cc)
            self.broadcast(CertMsg(HS_COMMIT, cc.view, cc))

    def on_certmsg(self, src: int, msg: CertMsg) -> None:
        if src != self.leader(self.view):
            return
        if msg.mtype == HS_PREPARE:
            self.on_prepare(src, msg)
        elif msg.mtype == HS_COMMIT:
            self.on_commit_cert(src, msg)

    def on_propose(self, src: int, msg: Propose) -> None:
        super().on_propose(src, msg)
        pending, self.pending_commit = self.pending_commit, None
        if pending is not None and self.proposal is not None and self.active:
            self.on_commit_cert(src, pending)

    def on_prepare(self, src: int, msg: CertMsg) -> None:
        if self.locked_in_view or not self.prepare_ok(msg):
            return
        v = self.view
        self.adopt(msg.cert)  # lock
        self.locked_in_view = True
        share = sign_vote(self.key, VoteContext.COMMIT, v, 1, msg.cert.block_hash)
        self.send(self.leader(v), Vote(HS_VOTE2, v, share))

    def on_commit_cert(self, src: int, msg: CertMsg) -> None:
        c = msg.cert
        if c.view != self.view or c.context != VoteContext.COMMIT:
            return
        if self.proposal is None:
            self.pending_commit = msg
            return
        if self.proposal.block.hash != c.block_hash or not self.verify(c):
            return
        v = self.view
        if self.high_commit is None or cert_order(c, self.high_commit) > 0:
            self.high_commit = c
        self.commit(self.store.get(c.block_hash))
        self.send(self.leader(v + 1), NewView(HS_NEWVIEW, v + 1, self.high, None))
        self.exit_view(v, "progress")


class ChainedHotStuffReplica(StreamlinedReplica):
    """One phase per view; lock on two-chains, commit on direct three-chains."""

    protocol = "hotstuff"
    propose_type = HS_PROPOSE
    newview_type = HS_NEWVIEW
    slow_phases = 1

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.locked: QuorumCertificate = GENESIS_CERT

    def safe_node(self, cw: QuorumCertificate) -> bool:
        if cw.view > self.locked.view or cw.block_hash == self.locked.block_hash:
            return True
        try:
            return extends(cw, self.locked, self.store)
        except MissingBlock:
            return False

    def apply_commit_rule(self, cw: QuorumCertificate) -> None:
        """Lock on the two-chain, commit the head of a direct three-chain."""
        if cw.genesis:
            return
        b2 = self.store.get(cw.block_hash)
        c1 = b2.parent_cert
        if c1.genesis:
            return
        if cert_order(c1, self.locked) > 0:
            self.locked = c1
        b1 = self.store.get(c1.block_hash)
        if c1.view == b2.view - 1 and b1.parent_cert.view == b1.view - 1:
            self.commit(self.store.get(b1.parent_hash))

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
        safe = self.safe_node(cw)
        if cert_order(cw, self.high) > 0:
            self.high = cw
        self.apply_commit_rule(cw)
        if safe or self.behavior.collude_with(self, src):
            share = sign_vote(self.key, VoteContext.PREPARE, v, 1, block.hash)
            self.log("vote", view=v, slot=1, hash=hx(block.hash))
            self.send(self.leader(v + 1), NewView(self.newview_type, v + 1, cw, share))
        else:
            self.send(self.leader(v + 1), NewView(self.newview_type, v + 1, self.high, None))
        self.exit_view(v, "progress")
