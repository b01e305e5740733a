"""Streamlined HotStuff-1 with adaptive slotting.

A leader proposes one block per slot for as long as its view lasts. The
first slot of a view must prove that it does not fork the previous view's
tail: either it extends a New-View certificate formed from NewView shares
(way i), or it extends the highest certificate and carries the lowest
uncertified block above it (way ii). Views end only on the view timer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .chain import GENESIS_BLOCK, Block, BlockStore, MissingBlock, lowest_uncertified_block
from .identity import (
    GENESIS_CERT,
    InsufficientShares,
    QuorumCertificate,
    VoteContext,
    assemble_certificate,
    cert_order,
    sign_vote,
)
from .messages import SLOT_NEWSLOT, SLOT_NEWVIEW, SLOT_PROPOSE, SLOT_REJECT, NewView, Propose, Reject, Vote
from .replica import Replica, hx


def safe_slot(s: int, v: int, cert: QuorumCertificate, carry_hash: Optional[bytes],
              store: BlockStore) -> bool:
    """The four SafeSlot cases. Raises MissingBlock for an unfetched carry."""
    carry = None
    if carry_hash is not None:
        carry = store.get(carry_hash)
        if carry is None:
            raise MissingBlock(carry_hash)
        if carry.parent_cert.block_hash != cert.block_hash:
            return False
    if cert.genesis:
        # nothing certified yet: view 1 starts on genesis, later views carry B_{1,1}
        if s != 1:
            return False
        if carry is None:
            return v == 1
        return carry.view == 1 and carry.slot == 1 and v > 1
    if cert.context == VoteContext.NEW_VIEW:
        if s != 1 or cert.fv is None:
            return False
        if cert.fv == v:
            return carry is None                                      # Case 1
        return (cert.fv < v and carry is not None
                and carry.slot == 1 and carry.view == cert.fv)        # Case 2
    if cert.context == VoteContext.NEW_SLOT:
        if s == 1:
            return (carry is not None and carry.slot == cert.slot + 1
                    and carry.view == cert.view and cert.view < v)    # Case 3
        return carry is None and cert.slot == s - 1 and cert.view == v  # Case 4
    return False


@dataclass(frozen=True, eq=False)
class _RetryFirst:
    """Internal wake-up after a carry block was fetched."""
    view: int
    mtype: int = -1


class SlottedReplica(Replica):
    protocol = "slotted-hs1"
    propose_type = SLOT_PROPOSE
    slotted = True
    slow_phases = 1

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.high: QuorumCertificate = GENESIS_CERT
        self.bh: Block = GENESIS_BLOCK
        self.slot = 1
        self.trust: dict[int, bool] = {}
        self.fast_paths: dict[int, int] = {}   # previous leader -> fast-path uses
        self.cert_history: dict[tuple, QuorumCertificate] = {}
        self._reset_view_state()

    def _reset_view_state(self):
        self.slot = 1
        self.nv: dict[int, NewView] = {}
        self.nv_shares: dict[tuple, dict] = {}
        self.nv_cert: Optional[QuorumCertificate] = None
        self.best: QuorumCertificate = self.high
        self.proposed_first = False
        self.share_fired = False
        self.fallback = False
        self.fast = False
        self.prev_nv_cert: Optional[QuorumCertificate] = None
        self.ns_votes: dict[tuple, dict] = {}
        self.ns_done: set[int] = set()
        self.leader_slot = 0
        self.leader_block: Optional[Block] = None
        self.seen_slots: dict[int, bytes] = {}

    @property
    def h_h(self) -> bytes:
        return self.bh.hash

    def remember(self, cert: QuorumCertificate) -> None:
        if not cert.genesis:
            self.cert_history.setdefault((cert.view, cert.slot, cert.context, cert.fv), cert)

    def verify(self, cert: QuorumCertificate) -> bool:
        ok = super().verify(cert)
        if ok:
            self.remember(cert)
        return ok

    # ------------------------------------------------------------ leader
    def on_enter(self, v: int) -> None:
        self._reset_view_state()
        if self.is_leader(v):
            self.set_timer(self.pm.share_timer(v), ("share", v))
            self.set_timer(self.pm.share_timer(v) + 2 * self.cfg.delta, ("fallback", v))
            if v == 1:
                self.proposed_first = True
                for parent, recipients in self.behavior.plan_proposals(self, GENESIS_CERT, []):
                    self.propose(parent, None, recipients)

    def on_protocol_timer(self, tag: tuple) -> None:
        if tag[1] != self.view or not self.active:
            return
        if tag[0] == "share":
            self.share_fired = True
            self.log("share_timer", view=self.view, senders=sorted(self.nv))
            self.try_first()
        elif tag[0] == "fallback":
            self.fallback = True
            self.try_first()

    def on_newview(self, src: int, msg: NewView) -> None:
        v = self.view
        if not self.is_leader() or src in self.nv:
            return
        if not self.verify(msg.cert):
            return
        share = msg.share
        if share is None or share.signer != src or share.context != VoteContext.NEW_VIEW \
                or share.fv != v or share.block_hash != msg.high_hash \
                or share.aux_hash != msg.cert.block_hash or not self.registry.verify_share(share):
            return
        self.nv[src] = msg
        if cert_order(msg.cert, self.best) > 0:
            self.best = msg.cert
        if self.nv_cert is None and not self.behavior.tailfork:
            bucket = self.nv_shares.setdefault(share.tuple, {})
            bucket[src] = share
            for s in self.behavior.extra_shares(self, share):
                bucket.setdefault(s.signer, s)
            if len(bucket) >= self.q:
                try:
                    cert = assemble_certificate(list(bucket.values()), self.n, self.f, fv=v)
                except InsufficientShares:
                    pass
                else:
                    self.nv_cert = cert
                    self.remember(cert)
                    self.log("cert", view=cert.view, slot=cert.slot, hash=hx(cert.block_hash),
                             ctx="newview", fv=v)
                    self.learned_cert(cert)
        prev = self.leader(v - 1)
        if src == prev and msg.cert.formed_in == v - 1 and not msg.cert.genesis:
            self.prev_nv_cert = msg.cert
            if self.trust.get(prev, True) and not self.proposed_first:
                self.fast = True
        self.try_first()

    def cond4(self) -> bool:
        m = len(self.nv)
        if m < self.q or m >= self.n:
            return False
        k = self.n - m
        top = self.max_known().key
        votes: dict[tuple, int] = {}
        for nv in self.nv.values():
            pos = (nv.share.view, nv.share.slot)
            if pos > top:
                votes[pos] = votes.get(pos, 0) + 1
        return all(c + k < self.f + 1 for c in votes.values())

    def max_known(self) -> QuorumCertificate:
        return self.best if cert_order(self.best, self.high) > 0 else self.high

    def try_first(self) -> None:
        if self.proposed_first or not self.active or not self.is_leader():
            return
        if self.behavior.tailfork:
            if len(self.nv) >= self.q:
                self.propose_tailfork()
            return
        if self.nv_cert is not None:
            self.log("first_slot", view=self.view, way="i", cond=1)
            self.proposed_first = True
            self.high = self.nv_cert
            for parent, recipients in self.behavior.plan_proposals(self, self.nv_cert,
                                                                   list(self.nv.values())):
                self.propose(parent, None, recipients)
            return
        cond = None
        if self.fast:
            cond = "trusted"
        elif len(self.nv) >= self.q:
            if len(self.nv) == self.n:
                cond = 2
            elif self.share_fired:
                cond = 3
            elif self.cond4():
                cond = 4
            elif self.behavior.eager(self):
                cond = "eager"
        if cond is None:
            return
        parent = self.max_known()
        carry = self.find_carry(parent)
        if carry is None and not self.fallback:
            return  # waiting on a fetch
        self.proposed_first = True
        if cond == "trusted":
            prev = self.leader(self.view - 1)
            self.fast_paths[prev] = self.fast_paths.get(prev, 0) + 1
        self.high = parent
        self.log("first_slot", view=self.view, way="ii", cond=cond,
                 carry=hx(carry.hash) if carry is not None else None)
        for p, recipients in self.behavior.plan_proposals(self, parent, list(self.nv.values())):
            c = carry if p is parent else self.find_carry(p)
            self.propose(p, c.hash if c is not None else None, recipients)

    def find_carry(self, cert: QuorumCertificate) -> Optional[Block]:
        """Lowest uncertified block above ``cert``; starts fetches when it is
        not known locally and returns None meanwhile."""
        try:
            return lowest_uncertified_block(cert, self.store)
        except MissingBlock:
            pass
        except ValueError:
            return None
        target = lowest_target(cert)
        asked = False
        for src, nv in sorted(self.nv.items()):
            h = nv.high_hash
            if (nv.share.view, nv.share.slot) <= cert.key:
                continue
            b = self.store.get(h)
            while b is not None and b.key > target:
                nxt = b.parent_hash
                if nxt in self.store:
                    b = self.store.get(nxt)
                    continue
                h = nxt
                b = None
            if b is None:
                self.park(h, src, _RetryFirst(self.view))
                asked = True
        if not asked:
            self.log("carry_unknown", view=self.view, cert=cert.short())
        return None

    def propose_tailfork(self) -> None:
        """Extend the lowest certificate that still collects a quorum, dropping
        the previous view's last slot whenever that is possible."""
        faulty = self.behavior.coord.faulty if self.behavior.coord else {self.id}
        cands = sorted({nv.cert for nv in self.nv.values()} | {self.high},
                       key=lambda c: (c.view, c.slot))
        chosen = None
        for c in cands:
            support = sum(1 for src, nv in self.nv.items()
                          if src not in faulty and cert_order(nv.cert, c) <= 0)
            if support + len(faulty) >= self.q:
                chosen = c
                break
        if chosen is None:
            chosen = self.max_known()
        carry = None
        if not (chosen.context == VoteContext.NEW_VIEW and chosen.fv == self.view):
            carry = self.find_carry(chosen)
            if carry is None and not self.fallback:
                return
        self.proposed_first = True
        self.high = chosen
        self.log("first_slot", view=self.view, way="ii", cond="tailfork",
                 carry=hx(carry.hash) if carry is not None else None)
        self.propose(chosen, carry.hash if carry is not None else None)

    def propose(self, parent: QuorumCertificate, carry_hash: Optional[bytes], recipients=None,
                slot: int = 1) -> Block:
        v = self.view
        base = carry_hash if carry_hash is not None else parent.block_hash
        block = Block(v, slot, parent, self.make_payload(base), carry_hash)
        self.store.add(block)
        self.leader_slot = slot
        self.leader_block = block
        self.log_propose(block)
        msg = Propose(self.propose_type, v, block, parent)
        targets = range(1, self.n + 1) if recipients is None else recipients
        for dst in targets:
            if dst != self.id:
                self.send(dst, msg)
        if self.id in targets:
            # the leader votes for its own slot at once, so it never leaves
            # the view holding a lower certificate than its backups
            self.on_propose(self.id, msg)
        return block

    def on_newslot(self, src: int, msg: Vote) -> None:
        share = msg.share
        if not self.is_leader() or share.signer != src or share.context != VoteContext.NEW_SLOT:
            return
        if share.view != self.view or share.slot != self.leader_slot:
            return
        if not self.registry.verify_share(share):
            return
        if share.slot in self.ns_done:
            return
        bucket = self.ns_votes.setdefault(share.tuple, {})
        bucket[src] = share
        for s in self.behavior.extra_shares(self, share):
            bucket.setdefault(s.signer, s)
        if len(bucket) >= self.q:
            try:
                cert = assemble_certificate(list(bucket.values()), self.n, self.f)
            except InsufficientShares:
                return
            self.ns_done.add(share.slot)
            self.remember(cert)
            self.log("cert", view=cert.view, slot=cert.slot, hash=hx(cert.block_hash), ctx="newslot")
            self.learned_cert(cert)
            if self.active and self.slot_window_open():
                self.propose(cert, None, None, slot=cert.slot + 1)

    def slot_window_open(self) -> bool:
        # a slot proposed later than this would land after the backups'
        # view timers and could gather no votes
        end = self.pm.view_deadline(self.view)
        return end is None or self.now + 2 * self.cfg.delta <= end

    def on_reject(self, src: int, msg: Reject) -> None:
        if not self.is_leader() or not self.verify(msg.cert):
            return
        prev = self.leader(self.view - 1)
        if self.prev_nv_cert is not None and cert_order(msg.cert, self.prev_nv_cert) > 0 \
                and self.trust.get(prev, True):
            self.trust[prev] = False
            self.log("distrust", view=self.view, leader=prev, by=src, cert=msg.cert.short())

    # ------------------------------------------------------------ backup
    def handle(self, src: int, msg) -> None:
        if isinstance(msg, Propose):
            self.on_propose(src, msg)
        elif isinstance(msg, Vote):
            self.on_newslot(src, msg)
        elif isinstance(msg, NewView):
            self.on_newview(src, msg)
        elif isinstance(msg, Reject):
            self.on_reject(src, msg)
        elif isinstance(msg, _RetryFirst):
            self.try_first()

    def on_past(self, src: int, msg) -> None:
        if isinstance(msg, Propose) and msg.block.parent_cert == msg.cert and self.verify(msg.cert):
            self.store.add(msg.block)

    def valid_proposal(self, src: int, msg: Propose) -> bool:
        b = msg.block
        return (src == self.leader(msg.view) and b.view == msg.view and b.slot >= 1
                and b.parent_cert == msg.cert and msg.cert.key < b.key
                and self.verify(msg.cert))

    def on_propose(self, src: int, msg: Propose) -> None:
        v = self.view
        block = msg.block
        s = block.slot
        if s < self.slot or not self.valid_proposal(src, msg):
            return
        seen = self.seen_slots.get(s)
        if seen is not None:
            if seen != block.hash:
                self.log("equivocation", view=v, slot=s, hash=hx(block.hash))
            return
        self.store.add(block)
        missing = self.missing_for(block.parent_hash)
        if missing is not None:
            self.park(missing, src, msg)
            return
        self.seen_slots[s] = block.hash
        cw = msg.cert
        w, sw = cw.view, cw.slot
        bw = self.store.get(cw.block_hash)
        if not cw.genesis:
            pc = bw.parent_cert
            if sw > 1 and pc.view == w and pc.slot == sw - 1:
                self.commit(self.store.get(pc.block_hash))   # commit rule, case 1
            elif sw == 1 and pc.view == w - 1 and not pc.genesis:
                self.commit(self.store.get(pc.block_hash))   # commit rule, case 2
            nogap = (s == sw + 1 and v == w) or (s == 1 and v == w + 1) or not self.cfg.nogap_rule
            prefix = self.ledger.is_committed(pc.block_hash) or not self.cfg.prefix_rule
            if nogap and prefix:
                self.speculate(bw)
        try:
            ok = safe_slot(s, v, cw, block.carry_hash, self.store)
        except MissingBlock:
            ok = False
        if (ok and cert_order(cw, self.high) >= 0) or self.behavior.collude_with(self, src):
            if cert_order(cw, self.high) >= 0:
                self.high = cw
            self.bh = block
            share = sign_vote(self.key, VoteContext.NEW_SLOT, v, s, block.hash, block.carry_hash)
            self.log("vote", view=v, slot=s, hash=hx(block.hash))
            self.send(self.leader(v), Vote(SLOT_NEWSLOT, v, share))
        else:
            self.log("reject", view=v, slot=s, hash=hx(block.hash), safe=ok)
            self.send(self.leader(v), Reject(SLOT_REJECT, v, s, self.high))
        self.slot = s + 1

    def concealed_newview(self, msg: NewView) -> NewView:
        """Adversary helper: the same NewView, but carrying the next-lower
        certificate formed in the same view and a share for its child."""
        c = msg.cert
        lower = [x for x in self.cert_history.values()
                 if x.context == VoteContext.NEW_SLOT and x.formed_in == c.formed_in
                 and x.key < c.key]
        if not lower:
            return msg
        low = max(lower, key=lambda x: x.key)
        child = next((b for b in self.store.at(low.view, low.slot + 1)
                      if b.parent_cert.block_hash == low.block_hash), None)
        if child is None:
            return msg
        share = sign_vote(self.key, VoteContext.NEW_VIEW, child.view, child.slot, child.hash,
                          low.block_hash, fv=msg.view)
        return NewView(SLOT_NEWVIEW, msg.view, low, share, child.hash)

    def newview_for(self, target: int) -> NewView:
        bh = self.bh
        share = sign_vote(self.key, VoteContext.NEW_VIEW, bh.view, bh.slot, bh.hash,
                          self.high.block_hash, fv=target)
        return NewView(SLOT_NEWVIEW, target, self.high, share, bh.hash)

    def on_timeout(self, v: int) -> None:
        self.log("newview", view=v + 1, to=self.leader(v + 1))
        self.send(self.leader(v + 1), self.newview_for(v + 1))

    def on_abandon(self, v: int, target: int) -> None:
        self.send(self.leader(target), self.newview_for(target))


def lowest_target(cert: QuorumCertificate) -> tuple[int, int]:
    if cert.context == VoteContext.NEW_VIEW:
        return (cert.fv, 1)
    if cert.genesis:
        return (1, 1)
    return (cert.view, cert.slot + 1)
