"""Epoch-based view synchronization.

Views are grouped into epochs of f+1 views. Crossing into an epoch boundary
view v (v mod (f+1) == 0) needs a timeout certificate built from n−f Wish
shares; inside an epoch the schedule start_time[v+k] = t + k·tau drives view
timers, and the start of the next view doubles as the timeout of the current
one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .identity import (
    ZERO_HASH,
    KeyRegistry,
    QuorumCertificate,
    VoteContext,
    VoteShare,
    assemble_certificate,
    leader_of,
    sign_vote,
)


class StaleTC(Exception):
    pass


class UnknownView(Exception):
    pass


class ViewStep(Enum):
    ENTER_NEXT_VIEW = "enter"
    SYNCHRONIZE_EPOCH = "sync"


def default_tau(delta: float) -> float:
    return 10 * delta


def is_epoch_boundary(view: int, f: int) -> bool:
    return view % (f + 1) == 0


def epoch_leaders(view: int, n: int, f: int) -> list[int]:
    """P_v .. P_{v+f}, in order, without duplicates."""
    out = []
    for k in range(f + 1):
        r = leader_of(view + k, n)
        if r not in out:
            out.append(r)
    return out


def wish_share(key, view: int) -> VoteShare:
    return sign_vote(key, VoteContext.WISH, view, 1, ZERO_HASH, None)


def is_tc(cert: QuorumCertificate) -> bool:
    return cert.context == VoteContext.WISH and cert.slot == 1 and cert.block_hash == ZERO_HASH


@dataclass
class PacemakerState:
    n: int
    f: int
    tau: float
    delta: float
    view: int = 0
    start_time: dict = field(default_factory=dict)
    highest_tc: int = 0  # boundary view of the newest TC applied
    wishes: dict = field(default_factory=dict)  # view -> {signer: share}
    tcs: dict = field(default_factory=dict)     # view -> formed/received TC

    def __post_init__(self):
        if self.tau <= 8 * self.delta:
            raise ValueError("tau must exceed 8·delta")

    def boot(self, now: float = 0.0) -> None:
        """Synchronous genesis: every replica starts view 1 at ``now``."""
        for k in range(self.f + 2):
            self.start_time[1 + k] = now + k * self.tau
        self.view = 1

    def completed_view(self, next_view: int) -> ViewStep:
        if is_epoch_boundary(next_view, self.f):
            return ViewStep.SYNCHRONIZE_EPOCH
        return ViewStep.ENTER_NEXT_VIEW

    def synchronize_epoch(self, key, v: int) -> list[tuple[int, VoteShare]]:
        """Wish(v) to each epoch leader, unless a TC for v is already held."""
        if not is_epoch_boundary(v, self.f):
            raise ValueError(f"view {v} is not an epoch boundary")
        if v in self.tcs:
            return []
        share = wish_share(key, v)
        return [(dst, share) for dst in epoch_leaders(v, self.n, self.f)]

    def on_wish(self, share: VoteShare, registry: KeyRegistry) -> Optional[QuorumCertificate]:
        """Collect a Wish; returns a freshly formed TC once n−f distinct Wishes arrived."""
        v = share.view
        if v in self.tcs or v <= self.highest_tc:
            return None
        if share.context != VoteContext.WISH or not registry.verify_share(share):
            return None
        bucket = self.wishes.setdefault(v, {})
        bucket.setdefault(share.signer, share)
        if len(bucket) >= self.n - self.f:
            tc = assemble_certificate(bucket.values(), self.n, self.f)
            self.tcs[v] = tc
            return tc
        return None

    def on_timeout_certificate(self, tc: QuorumCertificate, now: float) -> list[int]:
        """Apply a TC; returns the epoch leaders it should be relayed to.

        Raises StaleTC when the TC does not move the replica forward.
        """
        v = tc.view
        if not is_epoch_boundary(v, self.f):
            raise StaleTC(f"view {v} is not an epoch boundary")
        if v <= self.highest_tc or v < self.view:
            raise StaleTC(f"TC for view {v} at view {self.view}")
        self.tcs[v] = tc
        self.highest_tc = v
        for k in range(self.f + 2):
            self.start_time[v + k] = now + k * self.tau
        self.view = v
        return epoch_leaders(v, self.n, self.f)

    def share_timer(self, v: int) -> float:
        if v not in self.start_time:
            raise UnknownView(v)
        return self.start_time[v] + 3 * self.delta

    def view_deadline(self, v: int) -> Optional[float]:
        """Expiry of view v's timer, i.e. the scheduled start of v+1."""
        return self.start_time.get(v + 1)
