import random
import statistics

import pytest

from hotstuff1.audit import run_audits
from hotstuff1.chain import Block
from hotstuff1.harness import ExperimentConfig, build_simulation, run_once
from hotstuff1.identity import GENESIS_CERT
from hotstuff1.messages import FetchResponse
from hotstuff1.netsim import ConfigInvalid, Network, SimConfig


def test_same_seed_same_log():
    cfg = ExperimentConfig(protocol="slotted-hs1", n=7, f=2, gst=20, mix="random", horizon=100)
    assert run_once(cfg, 5).to_bytes() == run_once(cfg, 5).to_bytes()
    assert run_once(cfg, 5).to_bytes() != run_once(cfg, 6).to_bytes()


def test_failure_free_identical_chains():
    log = run_once(ExperimentConfig(protocol="basic-hs1", horizon=80), 0)
    chains = {}
    for _, k, a, d in log.records:
        if k == "commit":
            chains.setdefault(a, []).append(d["hash"])
    assert len(chains) == 4
    shortest = min(len(c) for c in chains.values())
    assert shortest > 5 and len({tuple(c[:shortest]) for c in chains.values()}) == 1


@pytest.mark.parametrize("bad", [dict(n=3, f=1), dict(tau=8.0), dict(delay_model="weird"),
                                 dict(delay_min=0.5, delay_max=0.5), dict(horizon=0)])
def test_invalid_configs(bad):
    with pytest.raises(ConfigInvalid):
        SimConfig(**bad).validate()


def test_post_gst_delay_bounds_and_distribution():
    cfg = SimConfig(delta=2.0, delay_min=0.25, delay_max=0.75)
    net = Network(cfg, random.Random(1))
    ds = [net.sample(1, 2, None, 10.0) - 10.0 for _ in range(100_000)]
    lo, hi = 0.5, 1.5
    assert all(lo < d <= hi for d in ds)
    # uniform on (lo, hi]: mean and variance against the closed forms
    assert abs(statistics.fmean(ds) - (lo + hi) / 2) < 0.01
    assert abs(statistics.pvariance(ds) - (hi - lo) ** 2 / 12) < 0.003
    quarters = [0] * 4
    for d in ds:
        quarters[min(int((d - lo) / (hi - lo) * 4), 3)] += 1
    assert all(abs(q - 25_000) < 800 for q in quarters)


def test_post_gst_delay_never_exceeds_delta():
    net = Network(SimConfig(), random.Random(2))
    assert max(net.sample(1, 2, None, 5.0) - 5.0 for _ in range(10_000)) <= 1.0


def test_pre_gst_drop_forced_at_gst_plus_delta():
    cfg = SimConfig(gst=50.0, pre_gst_drop=1.0)
    net = Network(cfg, random.Random(0))
    assert {net.sample(1, 2, None, t) for t in (0.0, 10.0, 49.0)} == {51.0}


def test_pre_gst_delay_capped_at_forced_delivery():
    cfg = SimConfig(gst=5.0, pre_gst_drop=0.0, pre_gst_max_delay=100.0)
    net = Network(cfg, random.Random(0))
    assert max(net.sample(1, 2, None, 4.0) for _ in range(1000)) <= 6.0


def test_hop_mode():
    net = Network(SimConfig(delay_model="hop"), random.Random(0))
    assert net.sample(1, 2, None, 3.0) == 4.0
    assert net.sample(1000, 2, None, 3.0) == 3.0


def test_fifo_links():
    net = Network(SimConfig(), random.Random(0))
    ats = [net.schedule(1, 2, None, t / 100) for t in range(200)]
    assert ats == sorted(ats)


def test_crashed_replica_emits_nothing():
    cfg = ExperimentConfig(protocol="streamlined-hs1", behaviors={2: "crashed"}, horizon=60)
    sim = build_simulation(cfg, 0)
    sim.cfg.log_messages = True
    log = sim.run()
    assert not [r for r in log.records if r[1] == "send" and r[2] == 2]
    assert any(r[1] == "send" and r[2] == 1 for r in log.records)


def test_fetch_rejects_wrong_bytes():
    sim = build_simulation(ExperimentConfig(), 0)
    r = sim.replicas[1]
    want = Block(7, 1, GENESIS_CERT, ())
    other = Block(8, 1, GENESIS_CERT, ())
    r.fetching[want.hash] = 0
    r.on_fetch_response(FetchResponse(want.hash, other))
    assert want.hash not in r.store and want.hash in r.fetching
    r.on_fetch_response(FetchResponse(want.hash, want))
    assert want.hash in r.store and want.hash not in r.fetching


def test_delay_variation_keeps_safety_verdicts():
    # same seeds, different post-GST delay ranges inside (0, delta]
    for seed in range(200):
        verdicts = set()
        for lo, hi in ((0.1, 1.0), (0.5, 0.6)):
            cfg = ExperimentConfig(protocol=("basic-hs1", "streamlined-hs1", "slotted-hs1")[seed % 3],
                                   n=4, f=1, mix="random", horizon=50, delay_min=lo, delay_max=hi)
            verdicts.add(run_audits(run_once(cfg, seed)).ok)
        assert verdicts == {True}, seed
