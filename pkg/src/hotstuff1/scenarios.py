"""Named scenarios with encoded verdicts.

The scripted schedules drive the first faulty leaders view by view
over three partitions of the correct replicas: A and A' of size f and A* of
size 1. One client transaction is planted in the first leader's pool so that
the run decides whether a client ever finalizes a block that is later
abandoned.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

from .adversary import AdversarySpec, Script, ViewPlan
from .audit import AUDITS, run_audits
from .client import CLIENT_BASE, WorkloadConfig
from .harness import ExperimentConfig, build_simulation, run_experiment, throughput_drop
from .runlog import RunLog


class UnknownScenario(KeyError):
    pass


@dataclass
class ScenarioResult:
    name: str
    protocol: str
    passed: bool
    verdict: dict
    logs: dict = field(default_factory=dict)   # variant -> RunLog


def partitions(n: int, f: int) -> dict:
    return {"A": list(range(f + 1, 2 * f + 1)),
            "A'": list(range(2 * f + 1, 3 * f + 1)),
            "A*": [3 * f + 1]}


# view -> ViewPlan; parent is the view of the extended certificate
BASIC_PREFIX = {
    1: ViewPlan(0, None, ("A",)),
    2: ViewPlan(0, None, ("A'",)),
    3: ViewPlan(1, None, ("A*",)),
    4: ViewPlan(2, None, None),
}
BASIC_NOGAP = {
    1: ViewPlan(0, None, ("A",)),
    2: ViewPlan(0, None, ("A'",)),
    3: ViewPlan(1, ("A*",), ()),
    4: ViewPlan(2, None, None),
}
BASIC_ROLLBACK = {
    1: ViewPlan(0, None, ("A",)),
    2: ViewPlan(0, None, None),
}
# streamlined: the leader of v+1 forms C_v, so "forwarding" C_v means
# sending the view v+1 proposal that carries it
STREAM_PREFIX = {
    1: ViewPlan(0),
    2: ViewPlan(1, ("A",)),
    3: ViewPlan(0, ("A'", "A*")),
    4: ViewPlan(3, ("A'",)),
    5: ViewPlan(1),
    6: ViewPlan(5, ("A*",)),
    7: ViewPlan(3),
}
STREAM_NOGAP = {
    1: ViewPlan(0),
    2: ViewPlan(1, ("A",)),
    3: ViewPlan(0, ("A'", "A*")),
    4: ViewPlan(3, ("A'",)),
    5: ViewPlan(1, ("A*",)),
    6: ViewPlan(3),
}


def scripted_run(protocol: str, n: int, f: int, plans: dict, prefix_rule: bool = True,
                 nogap_rule: bool = True, horizon: float = 160.0, seed: int = 0,
                 name: str = "", variant: str = "", stop_when: Optional[Callable] = None) -> RunLog:
    """Faulty replicas 1..f follow ``plans``; a planted transaction rides in B_1."""
    parts = partitions(n, f)
    script = Script(plans, parts)
    adv = AdversarySpec(behaviors={i: "scripted" for i in range(1, f + 1)}, partitions=parts,
                        script=script)
    cfg = ExperimentConfig(protocol=protocol, n=n, f=f, seeds=[seed], delay_model="hop",
                           tau=10.0, horizon=horizon, batch_size=4, clients=1, txs_per_client=0,
                           prefix_rule=prefix_rule, nogap_rule=nogap_rule, scenario=name)
    wl = WorkloadConfig(clients=1, txs_per_client=0, retransmit=1e9)
    sim = build_simulation(cfg, seed, adversary=adv, workload=wl, stop_when=stop_when)
    sim.log_data.header["variant"] = variant
    client = sim.clients[CLIENT_BASE]
    tx = client.new_tx()
    client.preload(tx)
    p1 = sim.replicas[1]
    p1.known_tx.add((tx.client, tx.tx_id))
    p1.pool[(tx.client, tx.tx_id)] = tx
    return sim.run()


def _violation_pair(name, protocol, n, f, plans, gate) -> ScenarioResult:
    off = scripted_run(protocol, n, f, plans, prefix_rule=(gate != "prefix"),
                       nogap_rule=(gate != "nogap"), name=name, variant="gate-off")
    on = scripted_run(protocol, n, f, plans, name=name, variant="gate-on")
    r_off = run_audits(off, ("safety", "client_safety"))
    r_on = run_audits(on, ("safety", "client_safety", "nogap_lemma"))
    verdict = {
        "gate": gate,
        "violations_gate_off": r_off.count("client_safety"),
        "violations_gate_on": len(r_on.violations),
        "safety_gate_off": r_off.count("safety"),
    }
    passed = verdict["violations_gate_off"] >= 1 and verdict["violations_gate_on"] == 0 \
        and verdict["safety_gate_off"] == 0
    return ScenarioResult(name, protocol, passed, verdict, {"gate-off": off, "gate-on": on})


def committed_sequences(log: RunLog) -> dict[int, list[str]]:
    faulty = set(log.header.get("faulty", []))
    seqs: dict[int, dict] = {r: {} for r in range(1, log.header["n"] + 1) if r not in faulty}
    for t, k, a, d in log.records:
        if k == "commit" and a in seqs:
            seqs[a][d["pos"]] = d["hash"]
    return {r: [s[p] for p in sorted(s)] for r, s in seqs.items()}


def _rollback(name, protocol, n=7, f=2) -> ScenarioResult:
    parts = partitions(n, f)

    def settled(sim) -> bool:
        # stop once every correct replica holds the same committed ledger
        # and it reaches past view 2
        reps = [r for r in sim.replicas.values() if not r.faulty]
        heads = {r.ledger.head.hash for r in reps}
        return len(heads) == 1 and reps[0].ledger.head.view >= 3

    log = scripted_run(protocol, n, f, BASIC_ROLLBACK, name=name, variant="rollback",
                       stop_when=settled)
    seqs = committed_sequences(log)
    rolled = sorted({a for t, k, a, d in log.records if k == "rollback"} & set(parts["A"]))
    identical = len({tuple(s) for s in seqs.values()}) == 1 and all(seqs.values())
    rep = run_audits(log, ("safety", "client_safety"))
    verdict = {"rolled_back": rolled, "identical_ledgers": identical,
               "height": len(next(iter(seqs.values()))), "violations": len(rep.violations)}
    passed = identical and rolled == parts["A"] and rep.ok
    return ScenarioResult(name, protocol, passed, verdict, {"rollback": log})


def _conceal(name, protocol, seed=0) -> ScenarioResult:
    cfg = ExperimentConfig(protocol=protocol, n=7, f=2, seeds=[seed], horizon=400,
                           behaviors={3: "conceal", 6: "conceal"}, scenario=name, clients=1)
    res = run_experiment(cfg, keep_logs=True)
    log = res.logs[0]
    rep = run_audits(log, ("safety", "client_safety", "deception", "fast_path"))
    distrust = [(a, d["leader"]) for t, k, a, d in log.records if k == "distrust"]
    verdict = {"distrust": distrust, "violations": rep.kinds()}
    passed = rep.ok and len(distrust) >= 1
    return ScenarioResult(name, protocol, passed, verdict, {"conceal": log})


ALTERNATING_13 = {2: "tailfork", 4: "tailfork", 6: "tailfork", 8: "tailfork"}


def _tailfork(name, protocol, seeds=(1, 2)) -> ScenarioResult:
    base = ExperimentConfig(protocol=protocol, n=13, f=4, seeds=list(seeds), horizon=600,
                            clients=0, scenario=name)
    ff = run_experiment(base)
    tf = run_experiment(ExperimentConfig(**{**base.__dict__, "behaviors": dict(ALTERNATING_13)}),
                        keep_logs=True)
    drop = throughput_drop(ff.mean("throughput"), tf.mean("throughput"))
    reps = [run_audits(log, ("safety", "client_safety", "tailfork")) for log in tf.logs]
    verdict = {"drop": drop, "violations": [r.kinds() for r in reps]}
    passed = drop < 0.10 and all(r.ok for r in reps)
    return ScenarioResult(name, protocol, passed, verdict,
                          {f"seed{s}": log for s, log in zip(seeds, tf.logs)})


SWEEP_PROTOCOLS = ("slotted-hs1", "streamlined-hs1", "basic-hs1", "hotstuff2", "hotstuff")


def slow_leader_table(tau: float, counts=(0, 1, 2, 4), seeds=(1,), horizon_views: int = 30,
                      protocols=SWEEP_PROTOCOLS, n: int = 13, f: int = 4) -> list[dict]:
    """Throughput and drop for each protocol and number of slow leaders.

    Slow leaders take every other id starting at 2 so that each follows a
    correct one. Delays are LAN-like: far below Δ, so a view timer spans
    many real message delays.
    """
    ids = [2, 4, 6, 8, 10, 12]
    rows = []
    for proto in protocols:
        base_tp = None
        for c in counts:
            beh = {i: "slow" for i in ids[:c]}
            cfg = ExperimentConfig(protocol=proto, n=n, f=f, seeds=list(seeds), tau=tau,
                                   horizon=horizon_views * tau, clients=0, delay_min=0.05,
                                   delay_max=0.2, behaviors=beh, scenario="slow-leader-sweep")
            res = run_experiment(cfg, audits=("safety", "client_safety"))
            tp = res.mean("throughput")
            if base_tp is None:
                base_tp = tp
            for r in res.reports:
                rows.append({"protocol": proto, "tau": tau, "slow": c, "seed": r.seed,
                             "throughput": r.throughput,
                             "drop": throughput_drop(base_tp, r.throughput) if c else 0.0,
                             "audit_ok": r.audit_ok})
    return rows


def _slow_sweep(name, protocol=None, tau: float = 10.0) -> ScenarioResult:
    rows = slow_leader_table(tau)
    by = {}
    for r in rows:
        by.setdefault((r["protocol"], r["slow"]), []).append(r["drop"])
    mean = {k: sum(v) / len(v) for k, v in by.items()}
    xs = sorted({s for p, s in by if s > 0})
    ok = all(mean[("slotted-hs1", x)] < mean[(p, x)]
             for x in xs for p in SWEEP_PROTOCOLS if p != "slotted-hs1")
    ok = ok and all(r["audit_ok"] for r in rows)
    verdict = {"drops": {f"{p}@{s}": round(d, 4) for (p, s), d in sorted(mean.items())}}
    return ScenarioResult(name, "slotted-hs1", ok, verdict, {})


def _rollback_sweep(name, protocol=None, seeds=range(10)) -> ScenarioResult:
    rollbacks = 0
    bad = []
    for proto in ("basic-hs1", "streamlined-hs1"):
        cfg = ExperimentConfig(protocol=proto, n=7, f=2, seeds=list(seeds), horizon=300,
                               behaviors={2: "rollback", 3: "rollback"}, scenario=name)
        res = run_experiment(cfg, audits=("safety", "client_safety", "nogap_lemma"))
        rollbacks += sum(r.rollbacks for r in res.reports)
        bad += [(proto, r.seed, r.violations) for r in res.reports if not r.audit_ok]
    verdict = {"rollbacks": rollbacks, "failing": bad}
    return ScenarioResult(name, "basic-hs1", rollbacks > 0 and not bad, verdict, {})


SCENARIOS = {
    "prefix-violation-basic": ("basic-hs1", lambda n: _violation_pair(n, "basic-hs1", 13, 4, BASIC_PREFIX, "prefix")),
    "nogap-violation-basic": ("basic-hs1", lambda n: _violation_pair(n, "basic-hs1", 13, 4, BASIC_NOGAP, "nogap")),
    "rollback-basic": ("basic-hs1", lambda n: _rollback(n, "basic-hs1")),
    "prefix-violation-streamlined": ("streamlined-hs1", lambda n: _violation_pair(n, "streamlined-hs1", 25, 8, STREAM_PREFIX, "prefix")),
    "nogap-violation-streamlined": ("streamlined-hs1", lambda n: _violation_pair(n, "streamlined-hs1", 25, 8, STREAM_NOGAP, "nogap")),
    "conceal-distrust-slotted": ("slotted-hs1", lambda n: _conceal(n, "slotted-hs1")),
    "tailfork-slotted": ("slotted-hs1", lambda n: _tailfork(n, "slotted-hs1")),
    "slow-leader-sweep": (None, lambda n: _slow_sweep(n)),
    "rollback-sweep": (None, lambda n: _rollback_sweep(n)),
}

# scripted schedules, for replaying a stored scenario log
SCRIPTED = {
    "prefix-violation-basic": ("basic-hs1", 13, 4, BASIC_PREFIX, "prefix"),
    "nogap-violation-basic": ("basic-hs1", 13, 4, BASIC_NOGAP, "nogap"),
    "prefix-violation-streamlined": ("streamlined-hs1", 25, 8, STREAM_PREFIX, "prefix"),
    "nogap-violation-streamlined": ("streamlined-hs1", 25, 8, STREAM_NOGAP, "nogap"),
}


def run_scenario(name: str, protocol: Optional[str] = None) -> ScenarioResult:
    if name not in SCENARIOS:
        raise UnknownScenario(name)
    proto, fn = SCENARIOS[name]
    if protocol is not None and proto is not None and protocol != proto:
        raise UnknownScenario(f"{name} is defined for {proto}, not {protocol}")
    return fn(name)


def replay_scenario(header: dict) -> RunLog:
    """Re-run the scenario variant recorded in a log header."""
    name = header.get("scenario")
    variant = header.get("variant", "")
    if name in SCRIPTED:
        protocol, n, f, plans, gate = SCRIPTED[name]
        off = variant == "gate-off"
        return scripted_run(protocol, n, f, plans, prefix_rule=not (off and gate == "prefix"),
                            nogap_rule=not (off and gate == "nogap"), name=name, variant=variant)
    conf = header.get("config")
    if conf is None:
        raise UnknownScenario(name)
    if name == "rollback-basic":
        return _rollback(name, conf["protocol"]).logs["rollback"]
    from .harness import run_once
    cfg = ExperimentConfig.from_json(json.dumps(conf))
    return run_once(cfg, int(header["seed"]))


__all__ = ["UnknownScenario", "ScenarioResult", "run_scenario", "SCENARIOS", "scripted_run",
           "slow_leader_table", "committed_sequences", "AUDITS"]
