"""Config-driven experiments: build a network, a trace, a router and a scheduler, then simulate.

A config is a JSON object::

    {
      "network":   "net.json" | {"nodes": n, "links": [...]} | {"kind": "ring", "n": 8, "c": 3} | {"kind": "g"},
      "trace":     "trace.jsonl" | {"kind": "random", "w": 50, "r": 0.5, "horizon": 5000, "seed": 1}
                   | {"kind": "ring", "r": 0.75, "beta": 0.9, "intervals": 10, "seed": 1},
      "adversary": {"kind": "fifo-g" | "ntg-g", "r": 0.95, "s0": 1000, "phases": 5},
      "router":    {"kind": "none"} | {"kind": "source", "variant": "perpacket", "r": 0.5, "R": 0.75, "w": 50,
                    "inband_mode": "abstract" | "concrete"}
                   | {"kind": "ring", "mode": "online" | "random", "r": 0.75, "beta": 0.9, "seed": 0},
      "scheduler": {"rule": "fifo"} | {"rule": "edf", "epsilon": 0.9, "mode": "derand" | "random",
                    "T": 256, "M": 4000, "d_max": 3, "seed": 0},
      "horizon": 10000, "queue_cap": null, "record_events": false,
      "output": "out_dir"
    }

``trace`` and ``adversary`` are alternatives; with ``adversary`` the
instability driver runs coupled to the simulation on network G.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Optional

from .adversaries import build_network_g, gen_random_admissible, run_instability
from .deadlines import (assign_deadlines_derandomized, assign_deadlines_random, compute_params as deadline_params,
                        toy_params, verify_deadline_condition)
from .engine import InBandConcrete, SimReport, Simulation
from .network import Network, build_network, load_network, load_trace, InjectionTrace
from .ring import OnlineRingRouter, build_parallel_ring, compute_ring_params, gen_ring_injections, ring_path, route_random
from .routing import SourceRouter, Variant, compute_params as routing_params
from .schedulers import Rule


@dataclass
class RunResult:
    report: SimReport
    summary: dict


def _resolve(value, base: str):
    if isinstance(value, str):
        path = value if os.path.isabs(value) else os.path.join(base, value)
        return path
    return value


def make_network(spec, base: str = ".") -> Network:
    spec = _resolve(spec, base)
    if isinstance(spec, str):
        return load_network(spec)
    kind = spec.get("kind")
    if kind == "ring":
        return build_parallel_ring(int(spec["n"]), int(spec["c"]))
    if kind == "g":
        return build_network_g()
    if "links" in spec:
        return build_network([tuple(l) for l in spec["links"]], spec.get("nodes"))
    raise ValueError(f"unrecognised network spec {spec!r}")


def make_trace(spec, net: Network, base: str = ".") -> InjectionTrace:
    spec = _resolve(spec, base)
    if isinstance(spec, str):
        return load_trace(spec)
    kind = spec.get("kind")
    if kind == "random":
        return gen_random_admissible(net, int(spec["w"]), float(spec["r"]), int(spec["horizon"]),
                                     spec.get("seed"), bundles=spec.get("bundles"))
    if kind == "ring":
        c = sum(1 for l in net.links if l.tail == 0)
        params = compute_ring_params(float(spec["r"]), net.n, c, float(spec["beta"]))
        return gen_ring_injections(params, int(spec["intervals"]), spec.get("seed"), fill=spec.get("fill", 1.0))
    raise ValueError(f"unrecognised trace spec {spec!r}")


def make_router(spec: Optional[dict], net: Network):
    """Returns ``(router callable or None, extra objects for reporting)``."""
    spec = spec or {"kind": "none"}
    kind = spec.get("kind", "none")
    if kind == "none":
        return None, {}
    if kind == "source":
        variant = Variant(spec.get("variant", "perpacket"))
        params = routing_params(float(spec["r"]), float(spec["R"]), int(spec["w"]), net.m, variant)
        router = SourceRouter(net, params)
        extra = {"source": router}
        if spec.get("inband_mode", "abstract") == "concrete":
            extra["concrete"] = InBandConcrete(router)
        elif spec.get("inband_mode", "abstract") != "abstract":
            raise ValueError(f"unknown inband_mode {spec['inband_mode']!r}")
        return router, extra
    if kind == "ring":
        c = sum(1 for l in net.links if l.tail == 0)
        params = compute_ring_params(float(spec["r"]), net.n, c, float(spec["beta"]))
        mode = spec.get("mode", "online")
        if mode == "online":
            router = OnlineRingRouter(params)
            return router, {"ring": router}
        if mode == "random":
            import numpy as np
            rng = np.random.default_rng(spec.get("seed"))

            def pick(packet):
                return ring_path(net.n, c, packet.source, packet.dest, int(rng.integers(c)) + 1)

            return pick, {}
        raise ValueError("ring routing inside a simulation supports modes online and random; "
                         "offline routing holds packets and is available through the ring command")
    raise ValueError(f"unknown router kind {kind!r}")


def _route_all(packets, router) -> None:
    for p in packets:
        if p.path is None:
            if router is None:
                raise ValueError(f"packet {p.id} has no path and no router is configured")
            p.path = tuple(router(p))


def run(config: dict, *, base: str = ".", write: bool = True) -> RunResult:
    """Run one experiment. Raises ``SimulationError`` or ``InstabilityCap`` on failure."""
    sched = config.get("scheduler", {"rule": "fifo"})
    rule = Rule(sched.get("rule", "fifo"))
    queue_cap = config.get("queue_cap")
    record = bool(config.get("record_events", False))
    horizon = config.get("horizon")

    if "adversary" in config:
        adv = config["adversary"]
        kind = {"fifo-g": "fifo", "ntg-g": "ntg"}.get(adv["kind"])
        if kind is None:
            raise ValueError(f"unknown adversary kind {adv['kind']!r}")
        net = build_network_g()
        router, _ = make_router(config.get("router"), net)
        inst = run_instability(kind, float(adv["r"]), int(adv["s0"]), int(adv["phases"]),
                               router=router, queue_cap=queue_cap)
        extra = {"phases": [
            {"index": p.index, "s": p.s, "s_next": p.s_next, "total_queued": p.total_queued,
             "x_prime": p.x_prime, "y": p.y_size, "lengths": list(p.lengths)} for p in inst.phases],
            "burst": inst.burst}
        report = inst.report
        report.extra.update(extra)
        result = RunResult(report, report.summary())
        if write and config.get("output"):
            write_outputs(result, os.path.join(base, config["output"]), record=False, events=[])
        return result

    if "network" not in config or "trace" not in config:
        raise ValueError("config needs 'network' and either 'trace' or 'adversary'")
    net = make_network(config["network"], base)
    trace = make_trace(config["trace"], net, base)
    router, objects = make_router(config.get("router"), net)
    packets = trace.packets()
    if router is not None:
        # a configured router replaces any paths stored in the trace
        for p in packets:
            p.path = None
    extra: dict = {}
    hold = None

    if rule is Rule.EDF:
        _route_all(packets, router)
        router = None
        d_max = int(sched.get("d_max", max((len(p.path) for p in packets), default=1)))
        eps = float(sched["epsilon"])
        w = int(sched.get("w", 1))
        if "T" in sched:
            dparams = toy_params(eps, net.m, w, d_max, int(sched["T"]), sched.get("M"))
        else:
            dparams = deadline_params(eps, net.m, w, d_max)
        mode = sched.get("mode", "derand")
        if mode == "derand":
            assignment = assign_deadlines_derandomized(packets, dparams, range(net.m))
        elif mode == "random":
            assignment = assign_deadlines_random(packets, dparams, sched.get("seed"))
        else:
            raise ValueError(f"unknown deadline mode {mode!r}")
        assignment.apply(packets)
        cert = verify_deadline_condition(packets, assignment)
        extra["deadline_params"] = dparams.to_json()
        extra["deadline_condition"] = cert.to_json()
        if assignment.log_h:
            extra["log_h_final"] = {f"{g}:{e}": v for (g, e), v in sorted(assignment.certificate().items())}
        hold = dparams.M

    sim = Simulation(net, rule, router=router, hold=hold, queue_cap=queue_cap, record_events=record)
    concrete = objects.get("concrete")
    if concrete is not None:
        concrete.attach(sim)
    sim.inject_all(packets)
    if horizon is None:
        sim.drain()
    else:
        sim.run(int(horizon))
    if "ring" in objects:
        objects["ring"].finish()
        extra["ring_interval_max_load"] = {str(k): int(v.max()) for k, v in sorted(objects["ring"].loads.items())}
    if "source" in objects:
        src = objects["source"]
        src.finish_phases()
        extra["routing_phases"] = [
            {"phase": d.phase_index, "D_final": d.D_final, "max_load": d.max_load} for d in src.phases]
    if concrete is not None:
        extra["control_per_window_max"] = max(concrete.sent_per_window, default=0)
    report = sim.report(**extra)
    result = RunResult(report, report.summary())
    if write and config.get("output"):
        write_outputs(result, os.path.join(base, config["output"]), record=record, events=sim.events)
    return result


def write_outputs(result: RunResult, out_dir: str, *, record: bool, events: list) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(result.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "queue.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "total_queue"])
        wr.writerows(result.report.queue_series)
    with open(os.path.join(out_dir, "packets.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["packet_id", "inject_time", "deliver_time", "delay", "control"])
        for d in result.report.deliveries:
            wr.writerow([d.packet_id, d.inject_time, d.deliver_time, d.delay, int(d.control)])
    if record:
        with open(os.path.join(out_dir, "events.csv"), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["step", "link", "packet_id", "kind"])
            wr.writerows(events)
