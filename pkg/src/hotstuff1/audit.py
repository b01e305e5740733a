"""Post-hoc auditors over a RunLog.

Every check reads only the log: the header (n, f, faulty set, Δ, GST,
protocol) and the event records. None of them touch simulator objects, so a
saved log re-audits to the same verdicts.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
import bisect
from typing import Optional

from .identity import GENESIS_HASH, leader_of
from .runlog import RunLog

HS1_PROTOCOLS = ("basic-hs1", "streamlined-hs1", "slotted-hs1")

# views, counted from the proposing view, by whose end all correct replicas
# commit a block proposed by a correct leader with correct successors
COMMIT_WINDOW = {
    "basic-hs1": 3,
    "streamlined-hs1": 3,
    "slotted-hs1": 3,
    "hotstuff2": 3,
    "hotstuff": 4,
}

EPS = 1e-9
GENESIS_HX = GENESIS_HASH.hex()[:16]


@dataclass
class Violation:
    kind: str
    detail: dict

    def as_dict(self) -> dict:
        return {"kind": self.kind, **self.detail}


@dataclass
class AuditReport:
    violations: list = field(default_factory=list)
    checked: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def count(self, kind: str) -> int:
        return sum(1 for v in self.violations if v.kind == kind)

    def kinds(self) -> dict:
        out: dict = defaultdict(int)
        for v in self.violations:
            out[v.kind] += 1
        return dict(out)

    def extend(self, name: str, found: list, checked: int) -> None:
        self.violations.extend(found)
        self.checked[name] = self.checked.get(name, 0) + checked


class LogView:
    """Indexes over one log shared by the auditors."""

    def __init__(self, log: RunLog):
        h = log.header
        self.log = log
        self.n = int(h["n"])
        self.f = int(h["f"])
        self.delta = float(h.get("delta", 1.0))
        self.gst = float(h.get("gst", 0.0))
        self.tau = float(h.get("tau", 10 * self.delta))
        self.horizon = float(h.get("horizon", 0.0))
        self.protocol = h.get("protocol", "?")
        self.faulty = set(h.get("faulty", []))
        self.correct = [i for i in range(1, self.n + 1) if i not in self.faulty]
        self.commits: dict[int, dict[int, dict]] = defaultdict(dict)
        self.enter: dict[int, dict[int, tuple]] = defaultdict(dict)   # rid -> view -> (t, start, how)
        self.leave: dict[int, dict[int, float]] = defaultdict(dict)   # rid -> view -> exit time
        self.proposals: list[tuple] = []
        self.block_of: dict[str, dict] = {}
        self.votes: dict[tuple, set] = defaultdict(set)              # (view, slot, hash) -> voters
        self.certified: set[str] = set()
        self.deceived: set[int] = set()   # views whose correct leader was misled by its predecessor
        self.end = 0.0
        self._depth: dict[str, Optional[int]] = {}
        prev_view: dict[int, int] = {}
        for t, kind, actor, d in log.records:
            self.end = max(self.end, t)
            if kind == "commit":
                self.commits[actor][d["pos"]] = dict(d, t=t)
            elif kind in ("enter", "wish"):
                v = d["view"]
                old = prev_view.get(actor)
                if old is not None and v > old:
                    for u in range(old, v):
                        self.leave[actor].setdefault(u, t)
                prev_view[actor] = v
                if kind == "enter":
                    self.enter[actor].setdefault(v, (t, d.get("start"), d.get("how")))
            elif kind == "propose":
                self.proposals.append((t, actor, d))
                self.block_of.setdefault(d["hash"], dict(d, t=t, by=actor))
                if d.get("pview", 0) > 0:
                    self.certified.add(d["parent"])
            elif kind == "vote":
                self.votes[(d["view"], d["slot"], d["hash"])].add(actor)
            elif kind == "cert":
                self.certified.add(d["hash"])
            elif kind == "distrust":
                self.deceived.add(d["view"])

    def leader(self, v: int) -> int:
        return leader_of(v, self.n)

    def is_correct(self, rid: int) -> bool:
        return rid not in self.faulty

    def ledger_parent(self, h: str) -> Optional[str]:
        b = self.block_of.get(h)
        if b is None:
            return None
        return b["carry"] if b.get("carry") else b["parent"]

    def extends(self, h: str, anc: str) -> Optional[bool]:
        """True if block ``h`` has ``anc`` in its ledger ancestry, None if unknown."""
        seen = 0
        while h is not None and seen < 100000:
            if h == anc:
                return True
            if h == GENESIS_HX:
                return False
            b = self.block_of.get(h)
            if b is None:
                return None
            h = self.ledger_parent(h)
            seen += 1
        return False

    def depth(self, h: str) -> Optional[int]:
        """Ledger height of block ``h`` (genesis is 0), None if unknown."""
        memo = self._depth
        path = []
        while h not in memo:
            if h == GENESIS_HX:
                memo[h] = 0
                break
            if h not in self.block_of:
                for x in path:
                    memo[x] = None
                return None
            path.append(h)
            h = self.ledger_parent(h)
        d = memo[h]
        for x in reversed(path):
            d = None if d is None else d + 1
            memo[x] = d
        return memo[path[0]] if path else d

    def ancestor_at(self, h: str, anc: str) -> Optional[bool]:
        """Whether ``anc`` is ``h`` or one of its ledger ancestors."""
        dh, da = self.depth(h), self.depth(anc)
        if dh is None or da is None:
            return None
        if dh < da:
            return False
        while dh > da:
            h = self.ledger_parent(h)
            dh -= 1
        return h == anc

    def sync_view(self) -> Optional[int]:
        """First view from which the pacemaker bounds are owed.

        With GST at 0 the boot is synchronous, so that is view 1. Otherwise it
        is the first epoch boundary every correct replica entered through a
        timeout certificate at or after GST.
        """
        if self.gst <= 0:
            return 1
        views = sorted({v for r in self.correct for v in self.enter[r]})
        for v in views:
            if v % (self.f + 1):
                continue
            entries = [self.enter[r].get(v) for r in self.correct]
            if all(e is not None and e[0] >= self.gst for e in entries):
                return v
        return None


# ---------------------------------------------------------------- safety
def audit_safety(lv: LogView) -> tuple[list, int]:
    """Correct replicas' committed logs agree position by position."""
    out = []
    checked = 0
    by_pos: dict[int, dict] = defaultdict(dict)
    for r in lv.correct:
        for pos, d in lv.commits.get(r, {}).items():
            by_pos[pos][r] = d
    for pos in sorted(by_pos):
        entries = by_pos[pos]
        checked += 1
        hashes = {d["hash"] for d in entries.values()}
        if len(hashes) > 1:
            out.append(Violation("safety", {
                "pos": pos, "blocks": {str(r): d["hash"] for r, d in sorted(entries.items())}}))
    return out, checked


def audit_client_safety(lv: LogView) -> tuple[list, int]:
    """Every finalized response names a block every correct replica commits.

    A correct replica that has committed a block at the same (view, slot)
    must have committed this very block (same state digest, containing the
    transaction); one that committed past that position without it never
    will, since committed positions only grow.
    """
    out = []
    finals = [(t, a, d) for t, k, a, d in lv.log.records if k == "finalize"]
    index: dict[int, dict[tuple, dict]] = {}
    heads: dict[int, tuple] = {}
    for r in lv.correct:
        idx = {}
        head = (0, 0)
        for d in lv.commits.get(r, {}).values():
            idx[(d["view"], d["slot"])] = d
            head = max(head, (d["view"], d["slot"]))
        index[r] = idx
        heads[r] = head
    for t, client, d in finals:
        key = (d["view"], d["slot"])
        txk = [client, d["tx"]]
        for r in lv.correct:
            c = index[r].get(key)
            if c is not None:
                if c["digest"] != d["digest"] or txk not in c.get("txs", []):
                    out.append(Violation("client_safety", {
                        "client": client, "tx": d["tx"], "view": key[0], "slot": key[1],
                        "replica": r, "reason": "different block committed"}))
                    break
            elif heads[r] > key:
                out.append(Violation("client_safety", {
                    "client": client, "tx": d["tx"], "view": key[0], "slot": key[1],
                    "replica": r, "reason": "skipped by committed log"}))
                break
    return out, len(finals)


def audit_nogap_lemma(lv: LogView) -> tuple[list, int]:
    """Once a certified block directly extends a certified block B, no
    certified block of a higher position conflicts with B.

    "Directly" means the previous view for the non-slotted variants and the
    previous slot of the same view for the slotted one. If the lemma holds
    the anchors lie on one chain, so each certified block only needs to be
    checked against the highest anchor below it.
    """
    if lv.protocol not in HS1_PROTOCOLS:
        return [], 0
    slotted = lv.protocol == "slotted-hs1"
    certified = [h for h in lv.certified if h in lv.block_of]
    anchors = set()
    for h in certified:
        b = lv.block_of[h]
        p = lv.block_of.get(b["parent"])
        if p is None or b["parent"] not in lv.certified:
            continue
        if slotted:
            direct = b["pview"] == b["view"] and b["pslot"] == b["slot"] - 1 and not b.get("carry")
        else:
            direct = b["pview"] == b["view"] - 1
        if direct:
            anchors.add(b["parent"])
    key = lambda h: (lv.block_of[h]["view"], lv.block_of[h]["slot"])
    order = sorted(anchors, key=key)
    akeys = [key(a) for a in order]
    out = []
    for h in sorted(certified, key=key):
        k = key(h)
        i = bisect.bisect_left(akeys, k) - 1
        if i < 0:
            continue
        a = order[i]
        if lv.ancestor_at(h, a) is False:
            b = lv.block_of[h]
            out.append(Violation("nogap_lemma", {"anchor": a, "conflicting": h,
                                                 "view": b["view"], "slot": b["slot"]}))
    return out, len(anchors)


# -------------------------------------------------------------- liveness
def audit_liveness(lv: LogView, window: Optional[int] = None) -> tuple[list, int]:
    """Submitted transactions finalize, and blocks of a correct leader that
    is followed by correct leaders commit at every correct replica by the time
    the window's traffic has landed: the last correct replica to leave the
    window's final view, plus one delay bound."""
    out = []
    checked = 0
    submitted = {}
    finalized = set()
    for t, k, a, d in lv.log.records:
        if k == "submit":
            submitted.setdefault((a, d["tx"]), t)
        elif k == "finalize":
            finalized.add((a, d["tx"]))
    for key, t in sorted(submitted.items()):
        checked += 1
        if key not in finalized:
            out.append(Violation("liveness_tx", {"client": key[0], "tx": key[1], "submitted": t}))

    w = window or COMMIT_WINDOW.get(lv.protocol, 3)
    vs = lv.sync_view()
    if vs is None:
        return out, checked
    commit_time: dict[int, dict[str, float]] = {
        r: {d["hash"]: d["t"] for d in lv.commits.get(r, {}).values()} for r in lv.correct}
    for t, actor, d in lv.proposals:
        v = d["view"]
        if v < vs or actor != lv.leader(v) or not lv.is_correct(actor):
            continue
        if any(lv.leader(v + k) in lv.faulty or v + k in lv.deceived for k in range(w)):
            continue
        if not lv.votes.get((v, d["slot"], d["hash"]), set()) & set(lv.correct):
            continue  # never reached a correct replica before its view ended
        last = v + w - 1
        leaves = [lv.leave[r].get(last) for r in lv.correct]
        if any(x is None for x in leaves):
            continue  # window not finished before the horizon
        dl = max(leaves) + lv.delta
        checked += 1
        for r in lv.correct:
            ct = commit_time[r].get(d["hash"])
            if ct is None or ct > dl + EPS:
                out.append(Violation("liveness_commit", {
                    "view": v, "slot": d["slot"], "hash": d["hash"], "replica": r,
                    "deadline": dl, "committed": ct}))
                break
    return out, checked


# ------------------------------------------------------------- pacemaker
def audit_pacemaker(lv: LogView) -> tuple[list, int]:
    """Post-GST view entry spread and the share-timer guarantee.

    The entry instant of view v for a replica is its pacemaker start time for
    v (progress may let it start early, which only shrinks the lag). All
    correct replicas must have entered v within 2Δ of the earliest start, and
    a leader whose share timer fires must hold NewViews from every correct
    replica.
    """
    out = []
    checked = 0
    vs = lv.sync_view()
    if vs is None:
        return out, 0
    views = sorted({v for r in lv.correct for v in lv.enter[r] if v >= vs})
    for v in views:
        entries = [lv.enter[r].get(v) for r in lv.correct]
        if any(e is None for e in entries):
            continue
        starts = [e[1] for e in entries if e[1] is not None]
        if not starts:
            continue
        checked += 1
        t0 = min(starts)
        latest = max(e[0] for e in entries)
        if latest > t0 + 2 * lv.delta + EPS:
            out.append(Violation("pacemaker_spread", {"view": v, "first": t0, "last": latest}))
    for t, k, a, d in lv.log.records:
        # view 1 opens on genesis with no NewViews to wait for
        if k != "share_timer" or d["view"] < max(vs, 2) or not lv.is_correct(a):
            continue
        checked += 1
        missing = sorted(set(lv.correct) - set(d["senders"]) - {a})
        if missing:
            out.append(Violation("share_timer", {"view": d["view"], "leader": a, "missing": missing}))
    return out, checked


# --------------------------------------------------------------- slotted
def audit_tailfork(lv: LogView, min_slots: int = 2) -> tuple[list, int]:
    """Per correct-leader view after synchronization: at most one uncertified
    slot, at least ``min_slots`` slots, and f+1 correct votes on the last.

    A view in which the leader caught its predecessor concealing a
    certificate is exempt; audit_deception bounds how often that happens.
    """
    if lv.protocol != "slotted-hs1":
        return [], 0
    vs = lv.sync_view() or 1
    per_view: dict[int, list] = defaultdict(list)
    for t, actor, d in lv.proposals:
        if actor == lv.leader(d["view"]) and lv.is_correct(actor):
            per_view[d["view"]].append(d)
    out = []
    checked = 0
    last_view = max((v for r in lv.correct for v in lv.leave[r]), default=0)
    for v, blocks in sorted(per_view.items()):
        if v < vs or v >= last_view or v in lv.deceived:
            continue
        checked += 1
        blocks = sorted(blocks, key=lambda d: d["slot"])
        unc = [d["slot"] for d in blocks if d["hash"] not in lv.certified]
        if len(unc) > 1:
            out.append(Violation("uncertified_slots", {"view": v, "slots": unc}))
        if len(blocks) < min_slots:
            out.append(Violation("few_slots", {"view": v, "slots": len(blocks)}))
        last = blocks[-1]
        voters = lv.votes.get((v, last["slot"], last["hash"]), set()) & set(lv.correct)
        if len(voters) < lv.f + 1:
            out.append(Violation("last_slot_votes", {"view": v, "slot": last["slot"],
                                                     "votes": len(voters)}))
    return out, checked


def audit_deception(lv: LogView) -> tuple[list, int]:
    """A concealing predecessor deceives each correct leader at most once."""
    if lv.protocol != "slotted-hs1":
        return [], 0
    pairs: dict[tuple, int] = defaultdict(int)
    for t, k, a, d in lv.log.records:
        if k == "distrust" and lv.is_correct(a) and t >= lv.gst:
            pairs[(a, d["leader"])] += 1
    out = [Violation("repeat_deception", {"leader": a, "deceiver": p, "times": c})
           for (a, p), c in sorted(pairs.items()) if c > 1]
    return out, len(pairs)


def audit_fast_path(lv: LogView) -> tuple[list, int]:
    """Between two consecutive correct leaders inside an epoch, when the
    earlier one formed a certificate in its view, the first slot goes out
    within Δ of that leader's NewView. A view whose predecessor was deceived
    has nothing to extend at network speed and is skipped."""
    if lv.protocol != "slotted-hs1":
        return [], 0
    vs = lv.sync_view() or 1
    nv_sent: dict[int, float] = {}
    for t, k, a, d in lv.log.records:
        if k == "newview" and a == lv.leader(d["view"] - 1):
            nv_sent.setdefault(d["view"], t)
    distrusted_after: dict[tuple, float] = {}
    formed: set[int] = set()   # views in which some certificate was formed
    for t, k, a, d in lv.log.records:
        if k == "distrust":
            distrusted_after.setdefault((a, d["leader"]), t)
        elif k == "cert":
            formed.add(d["fv"] if d.get("ctx") == "newview" else d["view"])
    first: dict[int, float] = {}
    for t, actor, d in lv.proposals:
        if d["slot"] == 1 and actor == lv.leader(d["view"]):
            first.setdefault(d["view"], t)
    out = []
    checked = 0
    for v, tp in sorted(first.items()):
        prev, cur = lv.leader(v - 1), lv.leader(v)
        if v - 1 < vs or v % (lv.f + 1) == 0 or v <= 1:
            continue
        if prev in lv.faulty or cur in lv.faulty or prev == cur or v - 1 not in formed \
                or v - 1 in lv.deceived:
            continue
        if (cur, prev) in distrusted_after and distrusted_after[(cur, prev)] < tp:
            continue
        if v not in nv_sent or nv_sent[v] < lv.gst:
            continue
        checked += 1
        if tp > nv_sent[v] + lv.delta + EPS:
            out.append(Violation("slow_first_slot", {"view": v, "newview": nv_sent[v], "proposed": tp}))
    return out, checked


AUDITS = {
    "safety": audit_safety,
    "client_safety": audit_client_safety,
    "nogap_lemma": audit_nogap_lemma,
    "liveness": audit_liveness,
    "pacemaker": audit_pacemaker,
    "tailfork": audit_tailfork,
    "deception": audit_deception,
    "fast_path": audit_fast_path,
}

SAFETY_AUDITS = ("safety", "client_safety", "nogap_lemma", "deception")


def run_audits(log: RunLog, names=None) -> AuditReport:
    lv = LogView(log)
    rep = AuditReport()
    for name in (names or SAFETY_AUDITS):
        found, checked = AUDITS[name](lv)
        rep.extend(name, found, checked)
    return rep
