from __future__ import annotations

import csv
import json

import pytest

from aqroute import cli
from aqroute.engine import SimulationError
from aqroute.experiment import run
from aqroute.network import load_trace

NET = {"nodes": 4, "links": [[0, 1, "a"], [1, 2, "b"], [2, 3, "c"], [3, 0, "d"], [0, 2, "e"], [1, 3, "f"]]}


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "net.json").write_text(json.dumps(NET))
    return tmp_path


def _main(argv, capsys):
    code = cli.main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_pipeline_through_subcommands(workdir, capsys):
    net, trace, routed = workdir / "net.json", workdir / "t.jsonl", workdir / "routed.jsonl"
    code, _ = _main(["adversary", "--kind", "random", "--net", net, "--r", 0.5, "--w", 20, "--horizon", 400,
                     "--out", trace], capsys)
    assert code == 0 and len(load_trace(trace)) > 0

    code, out = _main(["admissibility", "--trace", trace, "--w", 20, "--r", 0.5, "--weak"], capsys)
    assert code == 0 and json.loads(out.out)["admissible"] is True

    diag = workdir / "diag.csv"
    code, _ = _main(["route", "--net", net, "--trace", trace, "--r", 0.5, "--R", 0.75, "--w", 20,
                     "--variant", "perpacket", "--out", routed, "--diagnostics", diag], capsys)
    assert code == 0
    assert all(ev.path for ev in load_trace(routed))
    rows = list(csv.DictReader(open(diag)))
    assert rows and float(rows[-1]["D"]) <= 1

    delays, cert = workdir / "delays.csv", workdir / "cert.json"
    code, _ = _main(["schedule", "--net", net, "--trace", routed, "--epsilon", 0.9, "--T", 256,
                     "--out", delays, "--certificate", cert], capsys)
    assert code == 0
    doc = json.loads(cert.read_text())
    assert set(doc) >= {"params", "condition", "deadline_misses", "max_delay"}
    if doc["condition"]["ok"]:
        assert doc["deadline_misses"] == 0 and doc["max_delay"] <= 2 * doc["params"]["M"]
    assert len(list(csv.DictReader(open(delays)))) == len(load_trace(routed))


def test_schedule_needs_paths(workdir, capsys):
    trace = workdir / "bare.jsonl"
    trace.write_text('{"t": 0, "src": 0, "dst": 1}\n')
    code, out = _main(["schedule", "--net", workdir / "net.json", "--trace", trace, "--epsilon", 0.9], capsys)
    assert code == 1 and "path" in out.err


def test_ring_subcommand(workdir, capsys):
    trace = workdir / "ring.jsonl"
    from aqroute.ring import compute_ring_params, gen_ring_injections
    from aqroute.network import save_trace
    save_trace(gen_ring_injections(compute_ring_params(0.75, 4, 2, 0.9), 2, 1), trace)
    for mode in ("random", "offline", "online"):
        out, loads = workdir / f"{mode}.csv", workdir / f"{mode}-loads.csv"
        code, _ = _main(["ring", "--n", 4, "--c", 2, "--r", 0.75, "--beta", 0.9, "--mode", mode, "--trace", trace,
                         "--out", out, "--loads", loads], capsys)
        assert code == 0
        rows = list(csv.DictReader(open(loads)))
        if mode != "random":
            assert all(int(r["max_link_load"]) <= int(r["bound"]) for r in rows)


def test_adversary_network_g(workdir, capsys):
    out = workdir / "g.jsonl"
    code, _ = _main(["adversary", "--kind", "ntg-g", "--r", 0.8, "--s0", 100, "--phases", 2, "--with-paths",
                     "--out", out], capsys)
    assert code == 0 and all(ev.path for ev in load_trace(out))
    code, err = _main(["adversary", "--kind", "ntg-g", "--r", 0.7, "--out", out], capsys)
    assert code == 1


def test_simulate_is_deterministic(workdir, capsys):
    cfg = {"network": "net.json", "trace": {"kind": "random", "w": 20, "r": 0.5, "horizon": 600, "seed": 3},
           "router": {"kind": "source", "variant": "batched", "r": 0.5, "R": 0.75, "w": 20},
           "scheduler": {"rule": "lis"}, "record_events": True}
    outputs = []
    for name in ("a", "b"):
        path = workdir / f"{name}.json"
        path.write_text(json.dumps({**cfg, "output": name}))
        code, out = _main(["simulate", "--config", path], capsys)
        assert code == 0
        outputs.append({f: (workdir / name / f).read_bytes()
                        for f in ("summary.json", "queue.csv", "packets.csv", "events.csv")})
    assert outputs[0] == outputs[1]


def test_simulate_exit_codes(workdir, capsys, monkeypatch):
    unstable = workdir / "unstable.json"
    unstable.write_text(json.dumps({"adversary": {"kind": "fifo-g", "r": 0.95, "s0": 1000, "phases": 6},
                                    "queue_cap": 2000}))
    assert _main(["simulate", "--config", unstable], capsys)[0] == 3

    bad = workdir / "bad.json"
    bad.write_text(json.dumps({"network": "net.json"}))
    assert _main(["simulate", "--config", bad], capsys)[0] == 1

    short = workdir / "short.json"
    short.write_text(json.dumps({"network": "net.json", "trace": {"kind": "random", "w": 20, "r": 0.5,
                                                                  "horizon": 100, "seed": 1},
                                 "router": {"kind": "source", "variant": "inband", "r": 0.5, "R": 0.75, "w": 20,
                                            "inband_mode": "concrete"}}))
    code, out = _main(["simulate", "--config", short], capsys)
    assert code == 1 and "tau" in out.err

    def broken(*args, **kwargs):
        raise SimulationError("conservation broken")

    monkeypatch.setattr("aqroute.experiment.run", broken)
    assert _main(["simulate", "--config", bad], capsys)[0] == 2


def test_fifo_adversary_without_routing_grows(workdir):
    res = run({"adversary": {"kind": "fifo-g", "r": 0.95, "s0": 1000, "phases": 5}}, base=str(workdir), write=False)
    totals = [p["total_queued"] for p in res.summary["phases"]]
    assert all(b > a for a, b in zip(totals, totals[1:]))


def test_source_routing_with_lis_stays_bounded(workdir):
    # 50 routing phases of t windows each; the maximum queue must not trend upward
    from aqroute.routing import compute_params
    w = 4
    t = compute_params(0.5, 0.75, w, 6).t
    horizon = 50 * t * w
    res = run({"network": "net.json", "trace": {"kind": "random", "w": w, "r": 0.5, "horizon": horizon, "seed": 5},
               "router": {"kind": "source", "variant": "perpacket", "r": 0.5, "R": 0.75, "w": w},
               "scheduler": {"rule": "lis"}}, base=str(workdir), write=False)
    series = res.report.queue_series
    half = horizon // 2
    first = max((q for s, q in series if s < half), default=0)
    second = max((q for s, q in series if s >= half), default=0)
    assert len(res.summary["routing_phases"]) >= 50
    assert res.report.delivered == res.report.injected
    assert second <= 1.5 * first


@pytest.mark.parametrize("rule", ["fifo", "lifo", "ntg", "ftg", "lis", "sis"])
def test_ring_online_routing_keeps_queues_bounded(workdir, rule):
    from aqroute.ring import compute_ring_params
    p = compute_ring_params(0.75, 4, 2, 0.9)
    res = run({"network": {"kind": "ring", "n": 4, "c": 2},
               "trace": {"kind": "ring", "r": 0.75, "beta": 0.9, "intervals": 12, "seed": 2},
               "router": {"kind": "ring", "mode": "online", "r": 0.75, "beta": 0.9},
               "scheduler": {"rule": rule}}, base=str(workdir), write=False)
    series = [q for _, q in res.report.queue_series]
    assert res.report.steps >= 10 * p.W
    assert max(series) <= p.n * p.c * p.W
    # growth test: later intervals do not build on earlier ones
    peaks = [max([q for s, q in res.report.queue_series if k * p.W <= s < (k + 1) * p.W], default=0)
             for k in range(12)]
    assert not all(b > a for a, b in zip(peaks, peaks[1:]))
    assert max(res.summary["ring_interval_max_load"].values()) <= p.load_bound


def test_edf_experiment(workdir):
    res = run({"network": "net.json", "trace": {"kind": "random", "w": 500, "r": 0.1, "horizon": 2000, "seed": 2},
               "router": {"kind": "source", "variant": "perpacket", "r": 0.5, "R": 0.75, "w": 20},
               "scheduler": {"rule": "edf", "epsilon": 0.9, "T": 256, "d_max": 3}}, base=str(workdir), write=False)
    cond = res.summary["deadline_condition"]
    if cond["ok"]:
        assert res.summary["deadline_misses"] == 0
    assert res.report.delivered == res.report.injected
