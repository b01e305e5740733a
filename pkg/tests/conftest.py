import os
import sys

import pytest
from hypothesis import HealthCheck, settings

from hotstuff1.chain import Block, BlockStore, Transaction
from hotstuff1.identity import KeyRegistry, VoteContext, assemble_certificate, sign_vote

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def reg4():
    return KeyRegistry(4, 1, seed=7)


def make_cert(reg, ctx, view, slot, block_hash, aux=None, fv=None, signers=None):
    signers = signers or list(range(1, reg.n - reg.f + 1))
    shares = [sign_vote(reg.key(i), ctx, view, slot, block_hash, aux, fv) for i in signers]
    return assemble_certificate(shares, reg.n, reg.f, fv=fv)


def tx(i, key=b"k", value=None, client=1000):
    return Transaction(i, client, key, value if value is not None else b"v%d" % i)


class Chain:
    """Small helper to grow certified block chains in a store."""

    def __init__(self, reg, ctx=VoteContext.PREPARE):
        self.reg = reg
        self.ctx = ctx
        self.store = BlockStore()

    def block(self, parent_cert, view, slot=1, payload=(), carry=None):
        b = Block(view, slot, parent_cert, tuple(payload), carry)
        self.store.add(b)
        return b

    def certify(self, b, ctx=None, fv=None, aux=None):
        return make_cert(self.reg, ctx or self.ctx, b.view, b.slot, b.hash, aux=aux, fv=fv)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = mod.summary_lines() if mod else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
