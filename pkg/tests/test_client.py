import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hotstuff1.chain import Transaction
from hotstuff1.client import CLIENT_BASE, Client, DuplicateTx, WorkloadConfig
from hotstuff1.harness import ExperimentConfig, run_once
from hotstuff1.ledger import Response
from hotstuff1.metrics import hop_latencies
from hotstuff1.messages import Request
from hotstuff1.replica import Send


class World:
    def __init__(self):
        self.now = 0.0
        self.records = []

    def log(self, kind, actor, **d):
        self.records.append((self.now, kind, actor, d))


def client(quorum, n=4):
    return Client(CLIENT_BASE, n, quorum, World(), WorkloadConfig(), random.Random(0), 10.0)


def resp(tx_id, responder, result=b"r", view=3, slot=1, spec=True):
    return Response(tx_id, CLIENT_BASE, view, slot, result, responder, spec)


def test_single_submit_sends_one_request():
    c = client(3)
    c.submit(Transaction(1, CLIENT_BASE, b"k", b"v"))
    sends = [a for a in c.take_actions() if isinstance(a, Send)]
    assert len(sends) == 1 and isinstance(sends[0].msg, Request)


def test_resubmit_is_duplicate():
    c = client(3)
    t = Transaction(1, CLIENT_BASE, b"k", b"v")
    c.submit(t)
    with pytest.raises(DuplicateTx):
        c.submit(t)


def test_hs1_three_identical_finalize():
    c = client(3)
    c.submit(Transaction(1, CLIENT_BASE, b"k", b"v"))
    assert not c.on_response(1, resp(1, 1))
    assert not c.on_response(2, resp(1, 2))
    assert c.on_response(3, resp(1, 3))
    assert 1 in c.state.finalized


def test_hs1_two_plus_one_differing_does_not_finalize():
    c = client(3)
    c.submit(Transaction(1, CLIENT_BASE, b"k", b"v"))
    c.on_response(1, resp(1, 1))
    c.on_response(2, resp(1, 2))
    c.on_response(3, resp(1, 3, result=b"other"))
    assert 1 not in c.state.finalized


def test_baseline_two_identical_finalize():
    c = client(2)
    c.submit(Transaction(1, CLIENT_BASE, b"k", b"v"))
    c.on_response(1, resp(1, 1, spec=False))
    assert c.on_response(4, resp(1, 4, spec=False))


def test_repeated_responder_counts_once():
    c = client(3)
    c.submit(Transaction(1, CLIENT_BASE, b"k", b"v"))
    for _ in range(5):
        c.on_response(2, resp(1, 2))
    assert 1 not in c.state.finalized


def test_unknown_tx_response_ignored():
    c = client(1)
    assert not c.on_response(1, resp(99, 1))


@given(st.lists(st.tuples(st.integers(1, 4), st.integers(1, 3), st.integers(1, 2),
                          st.sampled_from([b"a", b"b"])), max_size=20))
def test_buckets_never_mix_view_slot(events):
    c = client(3)
    c.submit(Transaction(1, CLIENT_BASE, b"k", b"v"))
    seen = {}
    for src, view, slot, result in events:
        done = c.on_response(src, resp(1, src, result, view, slot))
        seen.setdefault((view, slot, result), set()).add(src)
        if done:
            assert len(seen[(view, slot, result)]) >= 3
            break
    else:
        assert all(len(s) < 3 for s in seen.values())
    for fp, voters in c.state.responses.get(1, {}).items():
        assert voters <= seen[fp]


def test_retransmission_after_dropped_request_finalizes_once():
    # the client's first target replica is crashed and drops the request
    cfg = ExperimentConfig(protocol="streamlined-hs1", n=4, f=1, behaviors={1: "crashed"},
                           txs_per_client=1, horizon=200)
    log = run_once(cfg, 0)
    kinds = [(k, d) for _, k, a, d in log.records if a == CLIENT_BASE]
    assert kinds[0][0] == "submit" and kinds[0][1]["to"] == 1
    assert any(k == "retransmit" for k, _ in kinds)
    assert sum(k == "finalize" for k, _ in kinds) == 1


def test_hop_finality_matches_half_phases():
    for protocol, hops in [("streamlined-hs1", 3), ("hotstuff2", 5)]:
        log = run_once(ExperimentConfig(protocol=protocol, delay_model="hop", horizon=60), 0)
        assert set(hop_latencies(log)) == {hops}
