"""Experiment configuration, runs, sweeps and plot-table emission."""

from __future__ import annotations

import csv
import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .adversary import AdversarySpec
from .audit import AUDITS, run_audits
from .baselines import ChainedHotStuffReplica, HotStuff2Replica
from .basic import BasicReplica
from .client import WorkloadConfig
from .metrics import MetricsReport, compute_metrics
from .netsim import ConfigInvalid, SimConfig, Simulation
from .replica import ProtocolConfig
from .runlog import RunLog
from .slotted import SlottedReplica
from .streamlined import StreamlinedReplica

PROTOCOLS = {
    "basic-hs1": BasicReplica,
    "streamlined-hs1": StreamlinedReplica,
    "slotted-hs1": SlottedReplica,
    "hotstuff": ChainedHotStuffReplica,
    "hotstuff2": HotStuff2Replica,
}

# baselines answer clients only after commit, so f+1 matching replies suffice
COMMIT_RESPONDERS = ("hotstuff", "hotstuff2")

MIX_BEHAVIORS = ("crashed", "slow", "tailfork", "conceal", "equivocate", "rollback")


class UnknownProtocol(ValueError):
    pass


class AuditFailure(RuntimeError):
    """An auditor flagged a run; ``pointer`` replays it."""

    def __init__(self, pointer: dict, kinds: dict):
        super().__init__(f"audit failed for {pointer}: {kinds}")
        self.pointer = pointer
        self.kinds = kinds


@dataclass
class ExperimentConfig:
    protocol: str = "streamlined-hs1"
    n: int = 4
    f: int = 1
    seeds: list = field(default_factory=lambda: [0])
    delta: float = 1.0
    tau: Optional[float] = None
    gst: float = 0.0
    delay_model: str = "uniform"
    delay_min: float = 0.1
    delay_max: float = 1.0
    horizon: float = 200.0
    batch_size: int = 10
    clients: int = 1
    txs_per_client: int = 8
    interval: float = 7.0
    behaviors: dict = field(default_factory=dict)   # replica id -> behavior name
    mix: Optional[str] = None                       # "random" draws behaviors per seed
    prefix_rule: bool = True
    nogap_rule: bool = True
    fifo: bool = True
    duplicate_prob: float = 0.0
    synthetic_load: bool = True   # leaders pad batches with no-op writes (saturated load)
    scenario: Optional[str] = None

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise UnknownProtocol(self.protocol)
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigInvalid("seeds must be distinct")
        if self.mix not in (None, "random"):
            raise ConfigInvalid(f"unknown adversary mix {self.mix}")

    @property
    def view_tau(self) -> float:
        return self.tau if self.tau is not None else 10 * self.delta

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        data = json.loads(text)
        if "behaviors" in data:
            data["behaviors"] = {int(k): v for k, v in data["behaviors"].items()}
        return cls(**data)

    def to_json(self) -> str:
        d = asdict(self)
        d["behaviors"] = {str(k): v for k, v in self.behaviors.items()}
        return json.dumps(d, sort_keys=True)


def random_mix(n: int, f: int, seed: int) -> dict:
    """Up to f faulty replicas with behaviors drawn from MIX_BEHAVIORS."""
    rng = random.Random(f"mix:{n}:{f}:{seed}")
    k = rng.randint(0, f)
    ids = rng.sample(range(1, n + 1), k)
    return {i: rng.choice(MIX_BEHAVIORS) for i in sorted(ids)}


def behaviors_for(cfg: ExperimentConfig, seed: int) -> dict:
    if cfg.mix == "random":
        return random_mix(cfg.n, cfg.f, seed)
    return dict(cfg.behaviors)


def build_simulation(cfg: ExperimentConfig, seed: int, adversary: Optional[AdversarySpec] = None,
                     workload: Optional[WorkloadConfig] = None, stop_when=None) -> Simulation:
    cfg.validate()
    factory = PROTOCOLS[cfg.protocol]
    adv = adversary or AdversarySpec(behaviors=behaviors_for(cfg, seed))
    sc = SimConfig(n=cfg.n, f=cfg.f, seed=seed, delta=cfg.delta, gst=cfg.gst, tau=cfg.view_tau,
                   delay_model=cfg.delay_model, delay_min=cfg.delay_min,
                   delay_max=cfg.delay_max, horizon=cfg.horizon, fifo=cfg.fifo,
                   duplicate_prob=cfg.duplicate_prob, adversary=adv)
    pc = ProtocolConfig(cfg.n, cfg.f, cfg.delta, cfg.view_tau, batch_size=cfg.batch_size,
                        synthetic_load=cfg.synthetic_load, prefix_rule=cfg.prefix_rule,
                        nogap_rule=cfg.nogap_rule)
    if workload is None:
        # leave room at the end so every submitted transaction can finalize
        until = max(cfg.horizon - 12 * cfg.view_tau, cfg.horizon / 2)
        workload = WorkloadConfig(clients=cfg.clients, txs_per_client=cfg.txs_per_client,
                                  interval=cfg.interval, submit_until=until)
    cq = cfg.f + 1 if cfg.protocol in COMMIT_RESPONDERS else cfg.n - cfg.f
    header = {"config": json.loads(cfg.to_json()), "scenario": cfg.scenario}
    return Simulation(sc, factory, proto_cfg=pc, workload=workload, client_quorum=cq,
                      header=header, stop_when=stop_when)


def run_once(cfg: ExperimentConfig, seed: int) -> RunLog:
    return build_simulation(cfg, seed).run()


def replay(path) -> tuple[RunLog, RunLog, bool]:
    """Re-run the configuration stored in a log header; True when the new
    log is byte-identical to the stored one."""
    old = RunLog.load(path)
    conf = old.header.get("config")
    if conf is None:
        raise ConfigInvalid(f"{path} carries no experiment config")
    cfg = ExperimentConfig.from_json(json.dumps(conf))
    if cfg.scenario:
        from .scenarios import replay_scenario
        new = replay_scenario(old.header)
    else:
        new = run_once(cfg, int(old.header["seed"]))
    return old, new, new.to_bytes() == old.to_bytes()


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reports: list
    logs: list

    @property
    def ok(self) -> bool:
        return all(r.audit_ok for r in self.reports)

    def mean(self, attr: str) -> float:
        xs = [getattr(r, attr) for r in self.reports if getattr(r, attr) is not None]
        return sum(xs) / len(xs) if xs else 0.0


def run_experiment(cfg: ExperimentConfig, audits=None, raise_on_violation: bool = False,
                   keep_logs: bool = False) -> ExperimentResult:
    cfg.validate()
    reports, logs = [], []
    for seed in cfg.seeds:
        log = run_once(cfg, seed)
        rep = compute_metrics(log, audits or tuple(AUDITS))
        reports.append(rep)
        if keep_logs:
            logs.append(log)
        if raise_on_violation and not rep.audit_ok:
            raise AuditFailure({"protocol": cfg.protocol, "seed": seed, "scenario": cfg.scenario},
                               rep.violations)
    return ExperimentResult(cfg, reports, logs)


def audit_log(log: RunLog, names=None):
    return run_audits(log, names or tuple(AUDITS))


# ------------------------------------------------------------ plot tables
PLOT_COLUMNS = {
    "replicas": ["protocol", "n", "f", "seed", "throughput", "latency_mean"],
    "batch": ["protocol", "batch_size", "seed", "throughput", "latency_mean"],
    "slow_leaders": ["protocol", "tau", "slow", "seed", "throughput", "drop"],
    "faulty_leaders": ["protocol", "faulty", "seed", "throughput", "drop"],
}


def emit_plot_data(rows_by_family: dict, out_dir) -> list[Path]:
    """One CSV per figure family. Missing families get header-only files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for fam, cols in PLOT_COLUMNS.items():
        p = out / f"{fam}.csv"
        with p.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            w.writeheader()
            for row in rows_by_family.get(fam, []):
                w.writerow(row)
        paths.append(p)
    return paths


def write_jsonl(reports: list[MetricsReport], path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w") as fh:
        for r in reports:
            fh.write(json.dumps(r.as_dict(), sort_keys=True) + "\n")
    return p


def throughput_drop(base: float, faulty: float) -> float:
    return 0.0 if base <= 0 else 1.0 - faulty / base


# ------------------------------------------------------------ audit sweeps
@dataclass
class SweepOutcome:
    protocol: str
    runs: int = 0
    counts: dict = field(default_factory=dict)     # violation kind -> total
    failures: list = field(default_factory=list)   # replay pointers

    def total(self, *kinds: str) -> int:
        return sum(self.counts.get(k, 0) for k in kinds)


def sweep_config(protocol: str, seed: int, ns=(4, 7, 10, 13), horizon: float = 150.0,
                 gsts=(0.0, 20.0)) -> ExperimentConfig:
    """Seed i runs n = ns[i mod len(ns)] with a random adversary mix; GST
    alternates so half of the runs start asynchronous."""
    n = ns[seed % len(ns)]
    return ExperimentConfig(protocol=protocol, n=n, f=(n - 1) // 3, seeds=[seed], horizon=horizon,
                            gst=gsts[(seed // len(ns)) % len(gsts)], mix="random", clients=1,
                            txs_per_client=4, scenario=None)


def audit_sweep(protocol: str, seeds, ns=(4, 7, 10, 13), horizon: float = 150.0,
                gsts=(0.0, 20.0), audits=None) -> SweepOutcome:
    out = SweepOutcome(protocol)
    for seed in seeds:
        cfg = sweep_config(protocol, seed, ns, horizon, gsts)
        rep = run_audits(run_once(cfg, seed), audits or tuple(AUDITS))
        out.runs += 1
        for k, c in rep.kinds().items():
            out.counts[k] = out.counts.get(k, 0) + c
        if not rep.ok:
            out.failures.append({"seed": seed, "n": cfg.n, "gst": cfg.gst,
                                 "mix": random_mix(cfg.n, cfg.f, seed), "kinds": rep.kinds()})
    return out
