"""Byzantine behaviors.

A faulty replica runs the ordinary protocol code; its behavior object is
consulted at leader decision points and rewrites outbound actions. All faulty
replicas of a run share one coordinator, which holds their keys (the adversary
may sign anything with keys it owns, never with a correct replica's key).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .identity import GENESIS_CERT, QuorumCertificate, VoteContext, VoteShare, cert_order, sign_vote
from .messages import CertMsg, NewView, Propose


class Coordinator:
    """Shared adversary knowledge for one run."""

    def __init__(self, n: int, f: int, faulty: set[int], registry, rng: random.Random,
                 targets: Optional[list[int]] = None):
        self.n = n
        self.f = f
        self.faulty = set(faulty)
        self.correct = [i for i in range(1, n + 1) if i not in self.faulty]
        self.registry = registry
        self.rng = rng
        if targets is None:
            k = min(f, len(self.correct))
            targets = sorted(rng.sample(self.correct, k)) if k else []
        self.targets = list(targets)
        self.certs: dict = {}  # view -> first-phase certificate, for scripted schedules

    def record(self, cert: QuorumCertificate) -> None:
        if cert.genesis or cert.context not in (VoteContext.PREPARE, VoteContext.NEW_SLOT):
            return
        cur = self.certs.get(cert.view)
        if cur is None or cert_order(cert, cur) > 0:
            self.certs[cert.view] = cert

    def forge(self, share: VoteShare, exclude: int) -> list[VoteShare]:
        """Shares over the same tuple from every other faulty replica."""
        out = []
        for j in sorted(self.faulty):
            if j == exclude:
                continue
            out.append(sign_vote(self.registry.key(j), share.context, share.view, share.slot,
                                 share.block_hash, share.aux_hash, share.fv))
        return out


class Behavior:
    faulty = False
    name = "correct"
    forge_responses = False
    crashed_at: Optional[float] = None
    tailfork = False
    conceal = False
    equivocate = False

    def __init__(self):
        self.coord: Optional[Coordinator] = None

    def bind(self, coord: Coordinator) -> None:
        self.coord = coord

    # hooks used by protocol code --------------------------------------
    def extra_shares(self, replica, share: VoteShare) -> list[VoteShare]:
        return []

    def skip_prev_cert(self, replica) -> bool:
        return False

    def eager(self, replica) -> bool:
        return False

    def collude_with(self, replica, src: int) -> bool:
        return False

    def plan_proposals(self, replica, default: QuorumCertificate, newviews: list):
        """List of (parent cert, recipients or None for everyone)."""
        return [(default, None)]

    def outbound(self, replica, actions: list) -> list:
        return actions


CORRECT = Behavior()


class Faulty(Behavior):
    faulty = True
    name = "faulty"
    forge_responses = True

    def __init__(self, forge: bool = True):
        super().__init__()
        self.forge_responses = forge

    def extra_shares(self, replica, share):
        return self.coord.forge(share, replica.id) if self.coord else []

    def collude_with(self, replica, src):
        return self.coord is not None and src in self.coord.faulty

    # helpers ------------------------------------------------------------
    def correct_set(self) -> list[int]:
        return self.coord.correct

    def split_recipients(self, targets: list[int]) -> tuple[list[int], list[int]]:
        faulty = sorted(self.coord.faulty)
        inside = sorted(set(targets) | set(faulty))
        outside = sorted(set(self.coord.correct) - set(targets)) + faulty
        return inside, sorted(set(outside))


class Crashed(Faulty):
    name = "crashed"

    def __init__(self, at: float = 0.0):
        super().__init__(forge=False)
        self.crashed_at = at


class SlowLeader(Faulty):
    """Holds its first proposal of each view until just before its view ends."""
    name = "slow"

    def outbound(self, replica, actions):
        for a in actions:
            msg = getattr(a, "msg", None)
            if isinstance(msg, Propose) and msg.block.slot == 1 and msg.view == replica.view:
                end = replica.pm.view_deadline(msg.view)
                if end is not None:
                    a.not_before = max(replica.now, end - replica.slow_margin())
        return actions


def highest_below(certs: list[QuorumCertificate], view_limit: int) -> Optional[QuorumCertificate]:
    best = None
    for c in certs:
        if c.view <= view_limit and (best is None or cert_order(c, best) > 0):
            best = c
    return best


class TailFork(Faulty):
    """Ignores the previous view's certificate and extends the one before."""
    name = "tailfork"
    tailfork = True

    def skip_prev_cert(self, replica):
        return True

    def eager(self, replica):
        return True

    def plan_proposals(self, replica, default, newviews):
        v = replica.view
        if default.view == v - 1 and not default.genesis:
            # the block certified in v-1 names the certificate it extended
            blk = replica.store.get(default.block_hash)
            if blk is not None:
                return [(blk.parent_cert, None)]
        certs = [nv.cert for nv in newviews] + [replica.high, default]
        alt = highest_below(certs, v - 2)
        return [(alt if alt is not None else default, None)]


class ConcealCert(Faulty):
    """Shows its newest certificate only to a target subset of correct replicas."""
    name = "conceal"
    conceal = True

    def __init__(self, targets: Optional[list[int]] = None):
        super().__init__()
        self.fixed_targets = targets
        self.last_slot: dict[int, int] = {}

    @property
    def targets(self) -> list[int]:
        return self.fixed_targets if self.fixed_targets is not None else self.coord.targets

    def plan_proposals(self, replica, default, newviews):
        # the real proposal goes to the targets, a decoy on an older
        # certificate to everyone else
        if getattr(replica, "slotted", False):
            return [(default, None)]
        v = replica.view
        certs = [nv.cert for nv in newviews] + [replica.high]
        alt = highest_below(certs, default.view - 1)
        if alt is None or default.view != v - 1:
            return [(default, None)]
        inside, outside = self.split_recipients(self.targets)
        return [(default, inside), (alt, outside)]

    def outbound(self, replica, actions):
        # basic / HotStuff-2: Prepare and Commit certificates reach only the targets;
        # slotted: the NewView to the next leader carries a lower certificate
        out = []
        allowed = set(self.targets) | self.coord.faulty
        slotted = getattr(replica, "slotted", False)
        v = replica.view
        nxt = replica.leader(v + 1)
        for a in actions:
            msg = getattr(a, "msg", None)
            if isinstance(msg, CertMsg) and a.dst not in allowed:
                continue
            if slotted and isinstance(msg, Propose) and msg.view == v and msg.block.slot >= 3 \
                    and nxt not in self.coord.faulty:
                if self.last_slot.get(v, msg.block.slot) < msg.block.slot:
                    continue   # nothing after the concealed slot
                end = replica.pm.view_deadline(v)
                if v not in self.last_slot and end is not None \
                        and replica.now + 4 * replica.cfg.delta > end:
                    # final slot: the next leader does not get it and instead
                    # hears early of the certificate one below
                    self.last_slot[v] = msg.block.slot
                    nv = replica.concealed_newview(replica.newview_for(v + 1))
                    out.append(type(a)(nxt, nv))
                if self.last_slot.get(v) == msg.block.slot and a.dst == nxt:
                    continue
            if isinstance(msg, NewView) and getattr(replica, "slotted", False) \
                    and a.dst not in self.coord.faulty:
                a.msg = replica.concealed_newview(msg)
            out.append(a)
        return out


class Equivocate(Faulty):
    """Two conflicting proposals to two disjoint halves of the correct replicas."""
    name = "equivocate"
    equivocate = True

    def plan_proposals(self, replica, default, newviews):
        correct = self.coord.correct
        half = len(correct) // 2
        a = correct[:half] + sorted(self.coord.faulty)
        b = correct[half:] + sorted(self.coord.faulty)
        return [(default, a), (default, b)]


class RollbackForcer(ConcealCert):
    """Conceal its certificate from all but f correct replicas and, as a later
    leader, build on the older certificate so the targets must roll back."""
    name = "rollback"
    tailfork = True

    def skip_prev_cert(self, replica):
        return False

    def eager(self, replica):
        return True

    def plan_proposals(self, replica, default, newviews):
        v = replica.view
        certs = [nv.cert for nv in newviews] + [replica.high, default]
        # if the newest certificate is known only through <= f NewViews,
        # abandon it (it was concealed by a faulty predecessor)
        top = max(certs, key=lambda c: (c.view, c.slot))
        holders = sum(1 for nv in newviews if nv.cert.block_hash == top.block_hash)
        q = self.coord.n - self.coord.f
        hidden = (top.view == v - 2 and holders <= self.coord.f) or \
            (replica.protocol == "basic-hs1" and top.view == v - 1 and holders < q)
        if hidden:
            alt = highest_below(certs, top.view - 1)
            if alt is not None:
                return [(alt, None)]
        return super().plan_proposals(replica, default, newviews)


@dataclass(frozen=True)
class ViewPlan:
    """What a scripted faulty leader does in one view.

    ``parent`` is the view whose certificate the proposal extends (0 for
    genesis). ``to`` and ``forward`` name partitions that receive the
    proposal and the formed certificate; None means everyone, an empty tuple
    means no correct replica.
    """
    parent: int
    to: Optional[tuple] = None
    forward: Optional[tuple] = None


class Script:
    """A fixed schedule of faulty-leader decisions over named partitions."""

    def __init__(self, plans: dict, partitions: dict):
        self.plans = dict(plans)
        self.partitions = {k: list(v) for k, v in partitions.items()}
        self.sim = None

    def bind(self, sim) -> None:
        self.sim = sim

    def behavior_for(self, rid: int) -> "ScriptedLeader":
        return ScriptedLeader(self)

    def members(self, labels: Optional[tuple], faulty: set[int]) -> Optional[list[int]]:
        if labels is None:
            return None
        out = set(faulty)
        for lab in labels:
            out.update(self.partitions[lab])
        return sorted(out)


class ScriptedLeader(Faulty):
    name = "scripted"

    def __init__(self, script: Script):
        super().__init__()
        self.script = script

    def plan_proposals(self, replica, default, newviews):
        plan = self.script.plans.get(replica.view)
        if plan is None:
            return [(default, None)]
        parent = GENESIS_CERT if plan.parent == 0 else self.coord.certs.get(plan.parent)
        if parent is None:
            replica.log("script_miss", view=replica.view, want=plan.parent)
            parent = default
        return [(parent, self.script.members(plan.to, self.coord.faulty))]

    def outbound(self, replica, actions):
        out = []
        for a in actions:
            msg = getattr(a, "msg", None)
            if isinstance(msg, CertMsg):
                plan = self.script.plans.get(msg.view)
                if plan is not None and plan.forward is not None:
                    if a.dst not in self.script.members(plan.forward, self.coord.faulty):
                        continue
            out.append(a)
        return out


BEHAVIORS = {
    "correct": Behavior,
    "crashed": Crashed,
    "slow": SlowLeader,
    "tailfork": TailFork,
    "conceal": ConcealCert,
    "equivocate": Equivocate,
    "rollback": RollbackForcer,
}


@dataclass
class AdversarySpec:
    """Per-replica behavior names plus optional A, A' and A* partitions."""
    behaviors: dict = field(default_factory=dict)  # replica id -> behavior name
    crash_at: float = 0.0
    targets: Optional[list] = None
    partitions: Optional[dict] = None  # {"A": [...], "A'": [...], "A*": [...]}
    script: Optional[object] = None

    def faulty(self) -> set[int]:
        return {r for r, b in self.behaviors.items() if b != "correct"}

    def validate(self, n: int, f: int) -> None:
        bad = self.faulty()
        if len(bad) > f:
            raise ValueError(f"{len(bad)} faulty replicas exceed f={f}")
        for r, b in self.behaviors.items():
            if not 1 <= r <= n:
                raise ValueError(f"unknown replica {r}")
            if b not in BEHAVIORS and b != "scripted":
                raise ValueError(f"unknown behavior {b}")
        if self.partitions:
            sizes = {k: len(v) for k, v in self.partitions.items()}
            if sizes.get("A") != f or sizes.get("A'") != f or sizes.get("A*") != 1:
                raise ValueError(f"partition sizes must be f, f, 1; got {sizes}")

    def build(self, rid: int) -> Behavior:
        name = self.behaviors.get(rid, "correct")
        if name == "correct":
            return CORRECT
        if name == "crashed":
            return Crashed(self.crash_at)
        if name == "scripted":
            return self.script.behavior_for(rid)
        return BEHAVIORS[name]()
