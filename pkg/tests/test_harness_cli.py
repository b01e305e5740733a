import csv
import json

import pytest
from click.testing import CliRunner

from hotstuff1.cli import main
from hotstuff1.harness import (PLOT_COLUMNS, ExperimentConfig, UnknownProtocol, emit_plot_data, replay,
                               run_experiment, run_once, throughput_drop)
from hotstuff1.metrics import compute_metrics
from hotstuff1.netsim import ConfigInvalid
from hotstuff1.runlog import RunLog


def test_zero_clients_zero_throughput():
    r = run_experiment(ExperimentConfig(clients=0, synthetic_load=False, horizon=60)).reports[0]
    assert r.throughput == 0 and r.latency_mean is None and r.finalized == 0


def test_doubling_client_rate_doubles_throughput():
    def tp(clients):
        cfg = ExperimentConfig(protocol="streamlined-hs1", clients=clients, txs_per_client=40,
                               interval=2.0, horizon=200, seeds=[0, 1], synthetic_load=False)
        return run_experiment(cfg).mean("throughput")
    one, two = tp(1), tp(2)
    assert one > 0 and abs(two / one - 2) <= 0.2


@pytest.mark.parametrize("n", [4, 7])
def test_hop_mode_reports_half_phases(n):
    for protocol, hops in [("streamlined-hs1", 3), ("hotstuff2", 5), ("hotstuff", 7)]:
        cfg = ExperimentConfig(protocol=protocol, n=n, f=(n - 1) // 3, delay_model="hop",
                               horizon=60)
        r = run_experiment(cfg).reports[0]
        assert set(r.hop_latencies) == {hops}


def test_metrics_recomputable_from_stored_log(tmp_path):
    cfg = ExperimentConfig(protocol="slotted-hs1", n=7, f=2, mix="random", horizon=100)
    log = run_once(cfg, 3)
    path = tmp_path / "run.log"
    log.save(path)
    assert compute_metrics(RunLog.load(path)).as_dict() == compute_metrics(log).as_dict()


def test_unknown_protocol_and_duplicate_seeds():
    with pytest.raises(UnknownProtocol):
        ExperimentConfig(protocol="pbft").validate()
    with pytest.raises(ConfigInvalid):
        ExperimentConfig(seeds=[1, 1]).validate()


def test_config_json_round_trip():
    cfg = ExperimentConfig(protocol="hotstuff2", behaviors={2: "slow"}, seeds=[3, 4])
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg


def test_throughput_drop():
    assert throughput_drop(10.0, 7.5) == pytest.approx(0.25)
    assert throughput_drop(0.0, 1.0) == 0.0


def test_empty_reports_give_header_only_csv(tmp_path):
    paths = emit_plot_data({}, tmp_path)
    assert {p.stem for p in paths} == set(PLOT_COLUMNS)
    for p in paths:
        rows = list(csv.reader(p.open()))
        assert rows == [PLOT_COLUMNS[p.stem]]


def test_csv_columns_match_schema(tmp_path):
    emit_plot_data({"batch": [{"protocol": "x", "batch_size": 5, "seed": 0, "throughput": 1.0,
                               "latency_mean": 2.0, "extra": 9}]}, tmp_path)
    rows = list(csv.DictReader((tmp_path / "batch.csv").open()))
    assert list(rows[0]) == PLOT_COLUMNS["batch"] and rows[0]["batch_size"] == "5"


def test_replay_identical(tmp_path):
    cfg = ExperimentConfig(protocol="basic-hs1", n=7, f=2, gst=20, mix="random", horizon=100)
    path = tmp_path / "r.log"
    run_once(cfg, 11).save(path)
    old, new, same = replay(path)
    assert same and old.digest() == new.digest()


# ------------------------------------------------------------------ CLI
def invoke(*args):
    return CliRunner().invoke(main, list(args), catch_exceptions=False)


def test_cli_run_writes_outputs(tmp_path):
    res = invoke("--seed", "2", "--protocol", "slotted-hs1", "--out", str(tmp_path), "run",
                 "--n", "4", "--horizon", "60", "--behaviors", "3=slow")
    assert res.exit_code == 0, res.output
    assert (tmp_path / "metrics.jsonl").exists()
    assert (tmp_path / "slotted-hs1-seed2.log").exists()
    assert json.loads(res.output)["protocol"] == "slotted-hs1"


def test_cli_run_config_file(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(ExperimentConfig(protocol="hotstuff2", horizon=50, seeds=[0, 1]).to_json())
    res = invoke("run", str(conf))
    assert res.exit_code == 0 and res.output.count('"protocol": "hotstuff2"') == 2


def test_cli_run_rejects_bad_config():
    res = CliRunner().invoke(main, ["run", "--n", "3", "--f", "1"])
    assert res.exit_code == 2


def test_cli_scenario_and_replay(tmp_path):
    res = invoke("--out", str(tmp_path), "scenario", "nogap-violation-streamlined")
    assert res.exit_code == 0 and json.loads(res.output)["passed"]
    on = invoke("replay", str(tmp_path / "nogap-violation-streamlined-gate-on.log"))
    assert on.exit_code == 0 and json.loads(on.output)["identical"]
    # the gate-off run reproduces exactly, and still fails its audit
    off = invoke("replay", str(tmp_path / "nogap-violation-streamlined-gate-off.log"))
    out = json.loads(off.output)
    assert off.exit_code == 1 and out["identical"] and "client_safety" in out["violations"]


def test_cli_scenario_wrong_protocol():
    res = CliRunner().invoke(main, ["--protocol", "hotstuff", "scenario", "rollback-basic"])
    assert res.exit_code == 2 and "rollback-basic" in res.output


def test_cli_audit(tmp_path):
    path = tmp_path / "a.log"
    run_once(ExperimentConfig(protocol="streamlined-hs1", horizon=60), 0).save(path)
    res = invoke("audit", str(path), "--only", "safety,client_safety")
    out = json.loads(res.output)
    assert res.exit_code == 0 and out["ok"] and out["violations"] == {}
    assert CliRunner().invoke(main, ["audit", str(path), "--only", "nope"]).exit_code == 2


def test_cli_sweep(tmp_path):
    res = invoke("--protocol", "streamlined-hs1", "--out", str(tmp_path), "sweep", "--family",
                 "batch", "--values", "5,10", "--seeds", "1", "--horizon", "60")
    assert res.exit_code == 0, res.output
    rows = list(csv.DictReader((tmp_path / "batch.csv").open()))
    assert [r["batch_size"] for r in rows] == ["5", "10"]
    assert (tmp_path / "batch.jsonl").exists()
