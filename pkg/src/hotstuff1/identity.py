"""Replica identities, vote shares and quorum certificates.

Certificates are plain lists of per-replica HMAC-SHA256 signatures. Keys are
derived deterministically from a registry seed so that every run is
reproducible.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Optional, Sequence

ZERO_HASH = bytes(32)


class VoteContext(IntEnum):
    PREPARE = 1
    COMMIT = 2
    NEW_SLOT = 3
    NEW_VIEW = 4
    # reserved for pacemaker Wish shares
    WISH = 5


class QuorumError(Exception):
    pass


class InsufficientShares(QuorumError):
    pass


class Mismatch(QuorumError):
    pass


def leader_of(view: int, n: int) -> int:
    """Index of the leader of ``view`` (1-based, view ≡ index mod n)."""
    r = view % n
    return n if r == 0 else r


def quorum_size(n: int, f: int) -> int:
    return n - f


def check_params(n: int, f: int) -> None:
    if f < 0 or n < 3 * f + 1:
        raise ValueError(f"need n >= 3f+1, got n={n} f={f}")


def vote_bytes(context: int, view: int, slot: int, block_hash: bytes,
               aux_hash: Optional[bytes], fv: Optional[int] = None) -> bytes:
    out = struct.pack("<BQQ", int(context), view, slot) + block_hash
    out += b"\x00" if aux_hash is None else b"\x01" + aux_hash
    if fv is not None:
        # New-View shares bind the view they are sent for, so fv cannot be relabelled
        out += struct.pack("<Q", fv)
    return out


@dataclass(frozen=True)
class SigningKey:
    index: int
    secret: bytes = field(repr=False)


@dataclass(frozen=True)
class VoteShare:
    signer: int
    context: VoteContext
    view: int
    slot: int
    block_hash: bytes
    aux_hash: Optional[bytes]
    signature: bytes
    fv: Optional[int] = None

    @property
    def tuple(self):
        return (self.context, self.view, self.slot, self.block_hash, self.aux_hash, self.fv)


def sign_vote(key: SigningKey, context: VoteContext, view: int, slot: int,
              block_hash: bytes, aux_hash: Optional[bytes] = None,
              fv: Optional[int] = None) -> VoteShare:
    if (fv is not None) and context != VoteContext.NEW_VIEW:
        raise ValueError("fv only applies to New-View shares")
    msg = vote_bytes(context, view, slot, block_hash, aux_hash, fv)
    sig = hmac.new(key.secret, msg, hashlib.sha256).digest()
    return VoteShare(key.index, VoteContext(context), view, slot, block_hash, aux_hash, sig, fv)


class KeyRegistry:
    """Holds every replica's key. With HMAC the verification key is the secret."""

    def __init__(self, n: int, f: int, seed: bytes | int = 0):
        check_params(n, f)
        self.n = n
        self.f = f
        if isinstance(seed, int):
            seed = seed.to_bytes(8, "little", signed=False)
        self._keys = {
            i: SigningKey(i, hashlib.sha256(b"replica-key" + seed + i.to_bytes(4, "little")).digest())
            for i in range(1, n + 1)
        }
        self._verified: set = set()

    def key(self, index: int) -> SigningKey:
        return self._keys[index]

    def verify_share(self, share: VoteShare) -> bool:
        key = self._keys.get(share.signer)
        if key is None:
            return False
        msg = vote_bytes(share.context, share.view, share.slot, share.block_hash,
                         share.aux_hash, share.fv)
        return hmac.compare_digest(hmac.new(key.secret, msg, hashlib.sha256).digest(), share.signature)

    def verify(self, cert: "QuorumCertificate") -> bool:
        if cert in self._verified:
            return True
        ok = verify_certificate(cert, self)
        if ok:
            self._verified.add(cert)
        return ok


@dataclass(frozen=True)
class QuorumCertificate:
    context: VoteContext
    view: int
    slot: int
    block_hash: bytes
    aux_hash: Optional[bytes]
    signers: tuple
    signatures: tuple
    fv: Optional[int] = None
    genesis: bool = False

    @property
    def tuple(self):
        return (self.context, self.view, self.slot, self.block_hash, self.aux_hash, self.fv)

    @property
    def key(self) -> tuple[int, int]:
        return (self.view, self.slot)

    @property
    def formed_in(self) -> int:
        """View in which the certificate was assembled."""
        return self.fv if self.fv is not None else self.view

    def short(self) -> str:
        extra = f",fv={self.fv}" if self.fv is not None else ""
        return f"C{self.context.name[0]}({self.slot},{self.view}{extra})"


def assemble_certificate(shares: Iterable[VoteShare], n: int, f: int,
                         fv: Optional[int] = None) -> QuorumCertificate:
    """Build a certificate from the n−f smallest-index distinct matching shares."""
    check_params(n, f)
    shares = list(shares)
    if not shares:
        raise InsufficientShares("no shares")
    t = shares[0].tuple
    for s in shares[1:]:
        if s.tuple != t:
            raise Mismatch(f"share from {s.signer} signs a different tuple")
    by_signer: dict[int, VoteShare] = {}
    for s in shares:
        by_signer.setdefault(s.signer, s)
    q = quorum_size(n, f)
    if len(by_signer) < q:
        raise InsufficientShares(f"{len(by_signer)} distinct shares, need {q}")
    ctx = shares[0].context
    if fv is None:
        fv = shares[0].fv
    if ctx == VoteContext.NEW_VIEW and fv is None:
        raise ValueError("New-View certificate needs fv")
    if ctx != VoteContext.NEW_VIEW and fv is not None:
        raise ValueError("fv only applies to New-View certificates")
    if shares[0].fv is not None and shares[0].fv != fv:
        raise Mismatch("shares were signed for a different fv")
    chosen = [by_signer[i] for i in sorted(by_signer)[:q]]
    s0 = chosen[0]
    return QuorumCertificate(
        context=ctx, view=s0.view, slot=s0.slot, block_hash=s0.block_hash,
        aux_hash=s0.aux_hash, signers=tuple(s.signer for s in chosen),
        signatures=tuple(s.signature for s in chosen), fv=fv,
    )


def verify_certificate(cert: QuorumCertificate, registry: KeyRegistry) -> bool:
    if cert.genesis:
        return cert == GENESIS_CERT
    if len(cert.signers) != len(cert.signatures):
        return False
    if len(set(cert.signers)) != len(cert.signers):
        return False
    if len(cert.signers) < quorum_size(registry.n, registry.f):
        return False
    if (cert.context == VoteContext.NEW_VIEW) != (cert.fv is not None):
        return False
    msg = vote_bytes(cert.context, cert.view, cert.slot, cert.block_hash, cert.aux_hash, cert.fv)
    for signer, sig in zip(cert.signers, cert.signatures):
        key = registry._keys.get(signer)
        if key is None:
            return False
        if not hmac.compare_digest(hmac.new(key.secret, msg, hashlib.sha256).digest(), sig):
            return False
    return True


def cert_order(a: QuorumCertificate, b: QuorumCertificate) -> int:
    """-1, 0 or 1 comparing (view, slot) lexicographically."""
    ka, kb = (a.view, a.slot), (b.view, b.slot)
    return (ka > kb) - (ka < kb)


def max_cert(certs: Sequence[QuorumCertificate]) -> QuorumCertificate:
    best = certs[0]
    for c in certs[1:]:
        if cert_order(c, best) > 0:
            best = c
    return best


def encode_cert(cert: QuorumCertificate) -> bytes:
    parts = [struct.pack("<BQQ", int(cert.context), cert.view, cert.slot), cert.block_hash]
    if cert.aux_hash is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + cert.aux_hash)
    if cert.context == VoteContext.NEW_VIEW:
        parts.append(struct.pack("<Q", cert.fv or 0))
    parts.append(struct.pack("<H", len(cert.signers)))
    for signer, sig in zip(cert.signers, cert.signatures):
        parts.append(struct.pack("<HH", signer, len(sig)) + sig)
    return b"".join(parts)


def decode_cert(data: bytes, offset: int = 0) -> tuple[QuorumCertificate, int]:
    ctx, view, slot = struct.unpack_from("<BQQ", data, offset)
    offset += 17
    block_hash = data[offset:offset + 32]
    offset += 32
    flag = data[offset]
    offset += 1
    aux = None
    if flag:
        aux = data[offset:offset + 32]
        offset += 32
    fv = None
    if ctx == VoteContext.NEW_VIEW:
        (fv,) = struct.unpack_from("<Q", data, offset)
        offset += 8
    (count,) = struct.unpack_from("<H", data, offset)
    offset += 2
    signers, sigs = [], []
    for _ in range(count):
        signer, ln = struct.unpack_from("<HH", data, offset)
        offset += 4
        signers.append(signer)
        sigs.append(data[offset:offset + ln])
        offset += ln
    cert = QuorumCertificate(VoteContext(ctx), view, slot, block_hash, aux,
                             tuple(signers), tuple(sigs), fv)
    if not signers and view == 0 and slot == 0 and ctx == VoteContext.PREPARE and aux is None:
        if block_hash == GENESIS_HASH:
            cert = GENESIS_CERT
        elif block_hash == ZERO_HASH:
            cert = ROOT_CERT
    return cert, offset


# Sentinel parent of the genesis block. It certifies nothing.
ROOT_CERT = QuorumCertificate(VoteContext.PREPARE, 0, 0, ZERO_HASH, None, (), (), None, True)

# The genesis block is (view 0, slot 0, parent ROOT_CERT, no payload, no carry);
# its hash is fixed here so the genesis certificate can live next to ROOT_CERT.
GENESIS_HASH = hashlib.sha256(
    struct.pack("<QQ", 0, 0) + encode_cert(ROOT_CERT) + struct.pack("<I", 0) + b"\x00"
).digest()
GENESIS_CERT = QuorumCertificate(VoteContext.PREPARE, 0, 0, GENESIS_HASH, None, (), (), None, True)
