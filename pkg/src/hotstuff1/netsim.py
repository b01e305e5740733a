"""Seeded discrete-event network simulator with partial synchrony.

Before GST the adversary may delay or drop messages; dropped messages are
re-enqueued at GST + Δ. After GST every message arrives within (0, Δ]. In hop
mode every replica-to-replica delivery costs exactly one unit and client links
are free, so latencies read directly as half-phase counts.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .adversary import AdversarySpec, Coordinator
from .client import CLIENT_BASE, Client, WorkloadConfig
from .identity import KeyRegistry
from .messages import TYPE_NAMES, message_digest
from .replica import ProtocolConfig, Send, SetTimer
from .runlog import RunLog


class ConfigInvalid(ValueError):
    pass


DELAY_MODELS = ("uniform", "fixed", "hop")


@dataclass
class SimConfig:
    n: int = 4
    f: int = 1
    seed: int = 0
    delta: float = 1.0
    gst: float = 0.0
    tau: Optional[float] = None
    delay_model: str = "uniform"
    delay_min: float = 0.1           # post-GST delays drawn from (delay_min·Δ, delay_max·Δ]
    delay_max: float = 1.0
    horizon: float = 200.0
    fifo: bool = True
    duplicate_prob: float = 0.0
    pre_gst_drop: float = 0.2
    pre_gst_max_delay: float = 4.0   # in units of Δ
    log_messages: bool = False
    adversary: AdversarySpec = field(default_factory=AdversarySpec)

    @property
    def view_tau(self) -> float:
        return self.tau if self.tau is not None else 10 * self.delta

    def validate(self) -> None:
        if self.f < 0 or self.n < 3 * self.f + 1:
            raise ConfigInvalid(f"need n >= 3f+1, got n={self.n} f={self.f}")
        if self.delta <= 0:
            raise ConfigInvalid("delta must be positive")
        if self.view_tau <= 8 * self.delta:
            raise ConfigInvalid("tau must exceed 8·delta")
        if self.delay_model not in DELAY_MODELS:
            raise ConfigInvalid(f"unknown delay model {self.delay_model}")
        if not 0 <= self.delay_min < self.delay_max <= 1:
            raise ConfigInvalid("need 0 <= delay_min < delay_max <= 1")
        if self.horizon <= 0 or self.gst < 0:
            raise ConfigInvalid("horizon must be positive and gst non-negative")
        try:
            self.adversary.validate(self.n, self.f)
        except ValueError as e:
            raise ConfigInvalid(str(e)) from e


@dataclass(order=True)
class SimEvent:
    at: float
    seq: int
    dst: int = field(compare=False)
    kind: str = field(compare=False)   # "msg" | "timer"
    payload: object = field(compare=False)
    src: int = field(compare=False, default=0)


class Network:
    """Delay sampling and per-link FIFO bookkeeping."""

    def __init__(self, cfg: SimConfig, rng: random.Random, pre_gst_hook=None):
        self.cfg = cfg
        self.rng = rng
        self.last: dict[tuple[int, int], float] = {}
        self.pre_gst_hook = pre_gst_hook

    def sample(self, src: int, dst: int, msg, t0: float) -> float:
        cfg = self.cfg
        client_link = src >= CLIENT_BASE or dst >= CLIENT_BASE
        if cfg.delay_model == "hop":
            return t0 + (0.0 if client_link else 1.0)
        lo = cfg.delay_min * cfg.delta
        if t0 >= cfg.gst:
            if cfg.delay_model == "fixed":
                return t0 + cfg.delta
            return t0 + self._post(lo)
        forced = cfg.gst + cfg.delta
        if self.pre_gst_hook is not None:
            at = self.pre_gst_hook(src, dst, msg, t0)
            if at is not None:
                return min(at, forced)
        if cfg.delay_model == "fixed" or client_link:
            return min(t0 + cfg.delta, forced)
        if self.rng.random() < cfg.pre_gst_drop:
            return forced  # dropped, re-enqueued at GST + Δ
        d = self.rng.uniform(lo, cfg.pre_gst_max_delay * cfg.delta)
        return min(t0 + max(d, 1e-9), forced)

    def _post(self, lo: float) -> float:
        # (lo, hi]: uniform() may return the lower end, so mirror it
        hi = self.cfg.delay_max * self.cfg.delta
        return hi - self.rng.uniform(0, hi - lo)

    def schedule(self, src: int, dst: int, msg, t0: float) -> float:
        at = self.sample(src, dst, msg, t0)
        if self.cfg.fifo:
            key = (src, dst)
            prev = self.last.get(key, 0.0)
            if at < prev:
                at = prev
            self.last[key] = at
        return at


class Simulation:
    """One run: replicas, clients, network and adversary, driven by a heap."""

    def __init__(self, cfg: SimConfig, factory: Callable, proto_cfg: Optional[ProtocolConfig] = None,
                 workload: Optional[WorkloadConfig] = None, client_quorum: Optional[int] = None,
                 header: Optional[dict] = None, stop_when: Optional[Callable] = None):
        cfg.validate()
        self.cfg = cfg
        self.now = 0.0
        self.seq = 0
        self.heap: list[SimEvent] = []
        head = dict(header or {})
        head.setdefault("protocol", getattr(factory, "protocol", "?"))
        for k in ("n", "f", "seed", "delta", "gst", "horizon", "delay_model", "delay_min", "delay_max"):
            head.setdefault(k, getattr(cfg, k))
        head.setdefault("tau", cfg.view_tau)
        head.setdefault("faulty", sorted(cfg.adversary.faulty()))
        head.setdefault("behaviors", {str(k): v for k, v in sorted(cfg.adversary.behaviors.items())})
        self.log_data = RunLog(head)
        self.stop_when = stop_when
        seed = cfg.seed
        self.net_rng = random.Random(f"net:{seed}")
        self.adv_rng = random.Random(f"adv:{seed}")
        self.work_rng = random.Random(f"work:{seed}")
        self.registry = KeyRegistry(cfg.n, cfg.f, seed)
        spec = cfg.adversary
        self.faulty = spec.faulty()
        self.coord = Coordinator(cfg.n, cfg.f, self.faulty, self.registry, self.adv_rng, spec.targets)
        if spec.script is not None:
            spec.script.bind(self)
        hook = getattr(spec.script, "pre_gst_delay", None) if spec.script is not None else None
        self.net = Network(cfg, self.net_rng, hook)
        self.proto_cfg = proto_cfg or ProtocolConfig(cfg.n, cfg.f, cfg.delta, cfg.view_tau)
        self.replicas = {}
        for rid in range(1, cfg.n + 1):
            beh = spec.build(rid)
            if beh.faulty:
                beh.bind(self.coord)
            self.replicas[rid] = factory(rid, self.proto_cfg, self.registry, self, beh)
        self.clients = {}
        wl = workload or WorkloadConfig(clients=0)
        quorum = client_quorum if client_quorum is not None else cfg.n - cfg.f
        for k in range(wl.clients):
            cid = CLIENT_BASE + k
            self.clients[cid] = Client(cid, cfg.n, quorum, self, wl,
                                       random.Random(f"client:{seed}:{k}"), cfg.view_tau)
        self.delivered = 0

    # world interface ---------------------------------------------------
    def log(self, kind: str, actor: int, **data) -> None:
        self.log_data.add(self.now, kind, actor, data)

    def crashed(self, rid: int) -> bool:
        r = self.replicas.get(rid)
        if r is None:
            return False
        at = r.behavior.crashed_at
        return at is not None and self.now >= at

    # scheduling --------------------------------------------------------
    def push(self, at: float, dst: int, kind: str, payload, src: int = 0) -> SimEvent:
        self.seq += 1
        ev = SimEvent(at, self.seq, dst, kind, payload, src)
        heapq.heappush(self.heap, ev)
        return ev

    def schedule_delivery(self, src: int, dst: int, msg, not_before: Optional[float] = None) -> SimEvent:
        t0 = self.now if not_before is None else max(self.now, not_before)
        at = self.net.schedule(src, dst, msg, t0)
        if self.cfg.log_messages:
            self.log("send", src, dst=dst, type=TYPE_NAMES.get(msg.mtype, "?"),
                     digest=message_digest(msg), at=at)
        ev = self.push(at, dst, "msg", msg, src)
        if self.cfg.duplicate_prob and self.net_rng.random() < self.cfg.duplicate_prob:
            self.push(self.net.sample(src, dst, msg, t0), dst, "msg", msg, src)
        return ev

    def apply(self, actor_id: int, actions: list) -> None:
        if actor_id in self.replicas:
            rep = self.replicas[actor_id]
            if self.crashed(actor_id):
                return
            if rep.behavior.faulty:
                actions = rep.behavior.outbound(rep, actions)
        for a in actions:
            if isinstance(a, Send):
                self.schedule_delivery(actor_id, a.dst, a.msg, a.not_before)
            elif isinstance(a, SetTimer):
                self.push(max(a.at, self.now), actor_id, "timer", a.tag)

    def actor(self, aid: int):
        return self.replicas.get(aid) or self.clients.get(aid)

    # main loop ---------------------------------------------------------
    def run(self) -> RunLog:
        for rid, rep in self.replicas.items():
            if self.crashed(rid):
                self.log("crash", rid)
                continue
            rep.start()
            self.apply(rid, rep.take_actions())
        for cid, cl in self.clients.items():
            cl.start()
            self.apply(cid, cl.take_actions())
        horizon = self.cfg.horizon
        while self.heap:
            ev = heapq.heappop(self.heap)
            if ev.at > horizon:
                break
            self.now = ev.at
            a = self.actor(ev.dst)
            if a is None or (ev.dst in self.replicas and self.crashed(ev.dst)):
                continue
            if ev.kind == "msg":
                self.delivered += 1
                if self.cfg.log_messages:
                    self.log("deliver", ev.dst, src=ev.src, type=TYPE_NAMES.get(ev.payload.mtype, "?"),
                             digest=message_digest(ev.payload))
                a.on_message(ev.src, ev.payload)
            else:
                a.on_timer(ev.payload)
            self.apply(ev.dst, a.take_actions())
            if self.stop_when is not None and self.stop_when(self):
                break
        self.now = min(max(self.now, 0.0), horizon)
        self.log("end", 0, delivered=self.delivered)
        return self.log_data


def run(cfg: SimConfig, factory: Callable, **kw) -> RunLog:
    return Simulation(cfg, factory, **kw).run()
