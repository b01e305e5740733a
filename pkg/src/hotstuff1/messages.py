"""Wire messages shared by every protocol.

Each protocol tags the shared shapes with its own type byte so that logs and
encodings tell them apart.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Optional

from .chain import Block, Transaction
from .identity import QuorumCertificate, VoteShare, encode_cert, vote_bytes
from .ledger import Response as ClientResponse

# basic HotStuff-1
BASIC_PROPOSE, BASIC_VOTE, BASIC_PREPARE, BASIC_NEWVIEW = 1, 2, 3, 4
# streamlined HotStuff-1
STREAM_PROPOSE, STREAM_NEWVIEW = 5, 6
# slotted HotStuff-1
SLOT_PROPOSE, SLOT_NEWSLOT, SLOT_NEWVIEW, SLOT_REJECT = 7, 8, 9, 10
# baselines
HS_PROPOSE, HS_VOTE, HS_PREPARE, HS_VOTE2, HS_COMMIT, HS_NEWVIEW = 11, 12, 13, 14, 15, 16
# pacemaker
WISH, TIMEOUT_CERT = 17, 18
# clients and recovery
REQUEST, RESPONSE = 20, 21
FETCH_REQUEST, FETCH_RESPONSE = 22, 23

TYPE_NAMES = {
    1: "Propose", 2: "ProposeVote", 3: "Prepare", 4: "NewView",
    5: "Propose", 6: "NewView",
    7: "Propose", 8: "NewSlot", 9: "NewView", 10: "Reject",
    11: "Propose", 12: "Vote", 13: "Prepare", 14: "Vote2", 15: "Commit", 16: "NewView",
    17: "Wish", 18: "TC", 20: "Request", 21: "Response", 22: "FetchRequest", 23: "FetchResponse",
}


def _share_bytes(share: Optional[VoteShare]) -> bytes:
    if share is None:
        return b"\x00"
    return (b"\x01" + struct.pack("<H", share.signer)
            + vote_bytes(share.context, share.view, share.slot, share.block_hash,
                         share.aux_hash, share.fv)
            + share.signature)


@dataclass(frozen=True, eq=False)
class Propose:
    mtype: int
    view: int
    block: Block
    cert: QuorumCertificate                 # C_w the block extends
    commit_cert: Optional[QuorumCertificate] = None  # CC_x (basic, HotStuff-2)

    @property
    def slot(self) -> int:
        return self.block.slot

    def encode(self) -> bytes:
        cc = b"\x00" if self.commit_cert is None else b"\x01" + encode_cert(self.commit_cert)
        return (struct.pack("<BQ", self.mtype, self.view) + self.block.encode()
                + encode_cert(self.cert) + cc)


@dataclass(frozen=True, eq=False)
class Vote:
    """ProposeVote, NewSlot, Vote, Vote2: a single share for the leader."""
    mtype: int
    view: int
    share: VoteShare

    def encode(self) -> bytes:
        return struct.pack("<BQ", self.mtype, self.view) + _share_bytes(self.share)


@dataclass(frozen=True, eq=False)
class CertMsg:
    """Prepare / Commit broadcast of a freshly formed certificate."""
    mtype: int
    view: int
    cert: QuorumCertificate

    def encode(self) -> bytes:
        return struct.pack("<BQ", self.mtype, self.view) + encode_cert(self.cert)


@dataclass(frozen=True, eq=False)
class NewView:
    mtype: int
    view: int
    cert: QuorumCertificate
    share: Optional[VoteShare] = None
    high_hash: Optional[bytes] = None  # slotted: H_h

    def encode(self) -> bytes:
        hh = b"\x00" if self.high_hash is None else b"\x01" + self.high_hash
        return (struct.pack("<BQ", self.mtype, self.view) + encode_cert(self.cert)
                + _share_bytes(self.share) + hh)


@dataclass(frozen=True, eq=False)
class Reject:
    mtype: int
    view: int
    slot: int
    cert: QuorumCertificate

    def encode(self) -> bytes:
        return struct.pack("<BQQ", self.mtype, self.view, self.slot) + encode_cert(self.cert)


@dataclass(frozen=True, eq=False)
class Wish:
    share: VoteShare
    mtype: int = WISH

    @property
    def view(self) -> int:
        return self.share.view

    def encode(self) -> bytes:
        return struct.pack("<B", self.mtype) + _share_bytes(self.share)


@dataclass(frozen=True, eq=False)
class TimeoutCert:
    tc: QuorumCertificate
    mtype: int = TIMEOUT_CERT

    @property
    def view(self) -> int:
        return self.tc.view

    def encode(self) -> bytes:
        return struct.pack("<B", self.mtype) + encode_cert(self.tc)


@dataclass(frozen=True, eq=False)
class Request:
    tx: Transaction
    gossip: bool = False
    mtype: int = REQUEST

    def encode(self) -> bytes:
        return struct.pack("<BB", self.mtype, int(self.gossip)) + self.tx.encode()


@dataclass(frozen=True, eq=False)
class ResponseMsg:
    response: ClientResponse
    mtype: int = RESPONSE

    def encode(self) -> bytes:
        return struct.pack("<B", self.mtype) + self.response.encode()


@dataclass(frozen=True, eq=False)
class FetchRequest:
    digest: bytes
    mtype: int = FETCH_REQUEST

    def encode(self) -> bytes:
        return struct.pack("<B", self.mtype) + self.digest


@dataclass(frozen=True, eq=False)
class FetchResponse:
    digest: bytes
    block: Block
    mtype: int = FETCH_RESPONSE

    def encode(self) -> bytes:
        return struct.pack("<B", self.mtype) + self.digest + self.block.encode()


def message_digest(msg) -> str:
    """Short stable digest used in run logs."""
    if isinstance(msg, Propose):
        raw = struct.pack("<BQ", msg.mtype, msg.view) + msg.block.hash + msg.cert.block_hash
    elif isinstance(msg, FetchResponse):
        raw = struct.pack("<B", msg.mtype) + msg.block.hash
    else:
        raw = msg.encode()
    return hashlib.sha256(raw).hexdigest()[:16]
