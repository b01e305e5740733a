"""Command line front end: ``hs1sim run|scenario|sweep|audit|replay``.

Every verb exits 0 only when all auditors pass (for ``scenario``, when the
scenario's verdict holds; for ``replay``, when the log also reproduces).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .audit import AUDITS, run_audits
from .harness import (PROTOCOLS, ExperimentConfig, UnknownProtocol, emit_plot_data, run_experiment,
                      run_once, throughput_drop, write_jsonl, replay as replay_log)
from .metrics import compute_metrics
from .netsim import ConfigInvalid
from .runlog import RunLog
from .scenarios import SCENARIOS, UnknownScenario, run_scenario


def _echo_json(obj) -> None:
    click.echo(json.dumps(obj, sort_keys=True, indent=2, default=str))


def _load_config(path, protocol, overrides: dict) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(Path(path).read_text()) if path else ExperimentConfig()
    if protocol:
        cfg.protocol = protocol
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg


def _parse_behaviors(spec: str | None) -> dict | None:
    # "2=slow,4=tailfork"
    if not spec:
        return None
    out = {}
    for part in spec.split(","):
        rid, _, name = part.partition("=")
        out[int(rid)] = name.strip()
    return out


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


@click.group()
@click.option("--seed", type=int, default=None, help="Seed (overrides the config's seed list).")
@click.option("--protocol", type=click.Choice(sorted(PROTOCOLS)), default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Directory for logs, metrics and tables.")
@click.pass_context
def main(ctx, seed, protocol, out):
    ctx.ensure_object(dict)
    ctx.obj.update(seed=seed, protocol=protocol, out=Path(out) if out else None)


@main.command()
@click.argument("config", required=False, type=click.Path(exists=True, dir_okay=False))
@click.option("--n", type=int, default=None)
@click.option("--f", type=int, default=None)
@click.option("--horizon", type=float, default=None)
@click.option("--gst", type=float, default=None)
@click.option("--delay-model", type=click.Choice(["uniform", "hop"]), default=None)
@click.option("--behaviors", default=None, help='Faulty replicas, e.g. "2=slow,4=tailfork".')
@click.pass_context
def run(ctx, config, n, f, horizon, gst, delay_model, behaviors):
    """Run one experiment configuration (JSON file and/or flags)."""
    o = ctx.obj
    cfg = _load_config(config, o["protocol"], dict(n=n, f=f, horizon=horizon, gst=gst,
                                                   delay_model=delay_model,
                                                   behaviors=_parse_behaviors(behaviors)))
    if o["seed"] is not None:
        cfg.seeds = [o["seed"]]
    try:
        res = run_experiment(cfg, keep_logs=o["out"] is not None)
    except (UnknownProtocol, ConfigInvalid) as e:
        raise click.UsageError(str(e))
    if o["out"]:
        write_jsonl(res.reports, o["out"] / "metrics.jsonl")
        for seed, log in zip(cfg.seeds, res.logs):
            log.save(o["out"] / f"{cfg.protocol}-seed{seed}.log")
    for r in res.reports:
        d = r.as_dict()
        d.pop("hop_latencies")
        d.pop("uncertified_per_view")
        _echo_json(d)
    sys.exit(0 if res.ok else 1)


@main.command()
@click.argument("name", type=click.Choice(sorted(SCENARIOS)))
@click.pass_context
def scenario(ctx, name):
    """Run a named scenario and report its verdict."""
    o = ctx.obj
    try:
        res = run_scenario(name, protocol=o["protocol"])
    except UnknownScenario as e:
        raise click.UsageError(str(e))
    if o["out"]:
        for variant, log in res.logs.items():
            log.save(o["out"] / f"{name}-{variant}.log")
    _echo_json({"scenario": name, "protocol": res.protocol, "passed": res.passed,
                "verdict": res.verdict})
    sys.exit(0 if res.passed else 1)


@main.command()
@click.argument("config", required=False, type=click.Path(exists=True, dir_okay=False))
@click.option("--family", type=click.Choice(["replicas", "batch", "slow_leaders", "faulty_leaders"]),
              default="replicas")
@click.option("--values", default=None, help="Comma list: n values, batch sizes or faulty counts.")
@click.option("--seeds", "nseeds", type=int, default=3, help="Seeds 0..k-1 per point.")
@click.option("--mix", type=click.Choice(["random"]), default=None)
@click.option("--horizon", type=float, default=None)
@click.pass_context
def sweep(ctx, config, family, values, nseeds, mix, horizon):
    """Sweep one axis of a figure family and write CSV plus JSONL."""
    o = ctx.obj
    base = _load_config(config, o["protocol"], dict(mix=mix, horizon=horizon))
    base.seeds = list(range(nseeds)) if o["seed"] is None else [o["seed"] + i for i in range(nseeds)]
    defaults = {"replicas": "4,7,10,13", "batch": "5,10,20", "slow_leaders": "0,1,2,4",
                "faulty_leaders": "0,1,2,4"}
    xs = _int_list(values or defaults[family])
    rows, reports, ok = [], [], True
    base_tp = None
    for x in xs:
        cfg = ExperimentConfig(**{**base.__dict__})
        if family == "replicas":
            cfg.n, cfg.f = x, (x - 1) // 3
        elif family == "batch":
            cfg.batch_size = x
        else:
            cfg.n, cfg.f = max(cfg.n, 3 * x + 1), max(cfg.f, x)
            beh = "slow" if family == "slow_leaders" else "tailfork"
            cfg.behaviors = {2 * i + 2: beh for i in range(x)}
        res = run_experiment(cfg)
        ok = ok and res.ok
        if base_tp is None:
            base_tp = res.mean("throughput")
        for r in res.reports:
            reports.append(r)
            rows.append({"protocol": cfg.protocol, "n": cfg.n, "f": cfg.f, "seed": r.seed,
                         "batch_size": cfg.batch_size, "tau": cfg.view_tau, "slow": x, "faulty": x,
                         "throughput": r.throughput, "latency_mean": r.latency_mean,
                         "drop": throughput_drop(base_tp, r.throughput)})
    out = o["out"] or Path(".")
    emit_plot_data({family: rows}, out)
    write_jsonl(reports, out / f"{family}.jsonl")
    for r in rows:
        click.echo(json.dumps(r, sort_keys=True))
    sys.exit(0 if ok else 1)


@main.command()
@click.argument("log_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--only", default=None, help=f"Comma list from: {', '.join(AUDITS)}")
def audit(log_path, only):
    """Run the auditors over a stored RunLog."""
    log = RunLog.load(log_path)
    names = tuple(only.split(",")) if only else tuple(AUDITS)
    unknown = [x for x in names if x not in AUDITS]
    if unknown:
        raise click.UsageError(f"unknown auditors {unknown}")
    rep = run_audits(log, names)
    m = compute_metrics(log, names)
    _echo_json({"ok": rep.ok, "checked": rep.checked, "violations": rep.kinds(),
                "first": [v.as_dict() for v in rep.violations[:5]],
                "throughput": m.throughput, "latency_mean": m.latency_mean})
    sys.exit(0 if rep.ok else 1)


@main.command()
@click.argument("log_path", type=click.Path(exists=True, dir_okay=False))
def replay(log_path):
    """Re-run the configuration stored in a RunLog and compare bit for bit."""
    try:
        old, new, same = replay_log(log_path)
    except (ConfigInvalid, UnknownScenario) as e:
        raise click.UsageError(str(e))
    rep = run_audits(new, tuple(AUDITS))
    _echo_json({"identical": same, "digest_stored": old.digest(), "digest_replayed": new.digest(),
                "audit_ok": rep.ok, "violations": rep.kinds()})
    sys.exit(0 if same and rep.ok else 1)


if __name__ == "__main__":
    main()
