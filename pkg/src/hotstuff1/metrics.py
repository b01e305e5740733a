"""Metrics recomputed from a RunLog alone."""

from __future__ import annotations

import statistics
from collections import defaultdict
from dataclasses import asdict, dataclass, field

from .audit import LogView, run_audits, AUDITS
from .runlog import RunLog


@dataclass
class MetricsReport:
    protocol: str
    n: int
    f: int
    seed: int
    duration: float
    committed_txs: float
    committed_blocks: float
    throughput: float
    finalized: int
    latency_mean: float | None
    latency_p50: float | None
    latency_p99: float | None
    hop_latencies: list = field(default_factory=list)
    rollbacks: int = 0
    tail_forked: int = 0
    uncertified_per_view: dict = field(default_factory=dict)
    pacemaker_violations: int = 0
    audit_ok: bool = True
    violations: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["uncertified_per_view"] = {str(k): v for k, v in sorted(self.uncertified_per_view.items())}
        return d


def percentile(xs: list, p: float) -> float | None:
    if not xs:
        return None
    s = sorted(xs)
    k = (len(s) - 1) * p
    lo = int(k)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (k - lo)


def hop_latencies(log: RunLog) -> list[float]:
    """Finalize time minus the proposal time of the finalized block."""
    proposed = {}
    out = []
    for t, k, a, d in log.records:
        if k == "propose":
            proposed.setdefault((d["view"], d["slot"]), t)
        elif k == "finalize":
            t0 = proposed.get((d["view"], d["slot"]))
            if t0 is not None:
                out.append(round(t - t0, 9))
    return out


def committed_totals(lv: LogView) -> tuple[float, float]:
    """Median over correct replicas of committed transactions and blocks."""
    txs, blocks = [], []
    for r in lv.correct:
        c = lv.commits.get(r, {})
        txs.append(sum(d["ntx"] for d in c.values()))
        blocks.append(len(c))
    if not txs:
        return 0.0, 0.0
    return float(statistics.median(txs)), float(statistics.median(blocks))


def tail_forked(lv: LogView, margin_views: int = 3) -> int:
    """Blocks of correct leaders that a correct replica voted for but no
    correct replica ever committed (recent views excluded as in flight)."""
    committed = {d["hash"] for r in lv.correct for d in lv.commits.get(r, {}).values()}
    last = max((v for r in lv.correct for v in lv.enter[r]), default=0)
    correct = set(lv.correct)
    count = 0
    for t, actor, d in lv.proposals:
        v = d["view"]
        if v > last - margin_views or actor != lv.leader(v) or actor in lv.faulty:
            continue
        if d["hash"] in committed:
            continue
        if lv.votes.get((v, d["slot"], d["hash"]), set()) & correct:
            count += 1
    return count


def uncertified_per_view(lv: LogView) -> dict[int, int]:
    out: dict[int, int] = defaultdict(int)
    for t, actor, d in lv.proposals:
        if actor == lv.leader(d["view"]) and d["hash"] not in lv.certified:
            out[d["view"]] += 1
    return dict(out)


def compute_metrics(log: RunLog, audits=None) -> MetricsReport:
    lv = LogView(log)
    duration = float(log.header.get("horizon") or lv.end) or 1.0
    txs, blocks = committed_totals(lv)
    lats = [d["latency"] for t, k, a, d in log.records if k == "finalize"]
    rollbacks = sum(1 for t, k, a, d in log.records if k == "rollback" and lv.is_correct(a))
    rep = run_audits(log, audits or tuple(AUDITS))
    return MetricsReport(
        protocol=lv.protocol, n=lv.n, f=lv.f, seed=int(log.header.get("seed", 0)),
        duration=duration, committed_txs=txs, committed_blocks=blocks,
        throughput=txs / duration, finalized=len(lats),
        latency_mean=statistics.fmean(lats) if lats else None,
        latency_p50=percentile(lats, 0.5), latency_p99=percentile(lats, 0.99),
        hop_latencies=hop_latencies(log) if log.header.get("delay_model") == "hop" else [],
        rollbacks=rollbacks, tail_forked=tail_forked(lv),
        uncertified_per_view=uncertified_per_view(lv),
        pacemaker_violations=rep.count("pacemaker_spread") + rep.count("share_timer"),
        audit_ok=rep.ok, violations=rep.kinds(),
    )
