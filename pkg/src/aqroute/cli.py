"""Command-line entry point: ``aqroute <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from .admissibility import check_strong, check_weak
from .engine import InstabilityCap, SimulationError

EXIT_OK = 0
EXIT_BAD_INPUT = 1
EXIT_INVARIANT = 2
EXIT_UNSTABLE = 3

log = logging.getLogger("aqroute")


def _print_json(doc) -> None:
    json.dump(doc, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def cmd_admissibility(args) -> int:
    from .network import load_trace

    trace = load_trace(args.trace)
    report = (check_weak if args.weak else check_strong)(trace, args.w, args.r)
    _print_json(report.to_json())
    return EXIT_OK


def cmd_route(args) -> int:
    from .network import load_network, load_trace
    from .routing import SourceRouter, Variant, compute_params

    net = load_network(args.net)
    trace = load_trace(args.trace)
    params = compute_params(args.r, args.R, args.w, net.m, Variant(args.variant))
    router = SourceRouter(net, params)
    routed = router.route_trace(trace)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        out.write(routed.dumps())
    finally:
        if args.out:
            out.close()
    if args.diagnostics:
        with open(args.diagnostics, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["phase", "window", "D", "max_load"])
            for diag in router.phases:
                for i, d in enumerate(diag.D_per_window):
                    wr.writerow([diag.phase_index, i, repr(d), diag.max_load])
    log.info("routed %d packets; t=%d windows per phase", len(routed), params.t)
    return EXIT_OK


def cmd_schedule(args) -> int:
    from .deadlines import (assign_deadlines_derandomized, assign_deadlines_random, compute_params, toy_params,
                            verify_deadline_condition)
    from .engine import Simulation
    from .network import load_network, load_trace
    from .schedulers import Rule

    net = load_network(args.net)
    trace = load_trace(args.trace)
    packets = trace.packets()
    if any(p.path is None for p in packets):
        raise ValueError("schedule needs a path-annotated trace (see the route command)")
    d_max = args.d_max or max((len(p.path) for p in packets), default=1)
    if args.T is not None:
        params = toy_params(args.epsilon, net.m, args.w, d_max, args.T, args.M)
    else:
        params = compute_params(args.epsilon, net.m, args.w, d_max)
    if args.mode == "derand":
        assignment = assign_deadlines_derandomized(packets, params, range(net.m))
    else:
        assignment = assign_deadlines_random(packets, params, args.seed)
    assignment.apply(packets)
    cert = verify_deadline_condition(packets, assignment)
    sim = Simulation(net, Rule.EDF, hold=params.M)
    sim.inject_all(packets)
    sim.drain()
    report = sim.report()
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["packet_id", "inject_time", "arrival_time", "delay"])
        for d in sorted(report.deliveries, key=lambda d: d.packet_id):
            wr.writerow([d.packet_id, d.inject_time, d.deliver_time, d.delay])
    doc = {"params": params.to_json(), "condition": cert.to_json(),
           "deadline_misses": len(report.deadline_misses), "max_delay": report.max_delay}
    if assignment.log_h:
        doc["log_h_final"] = {f"{g}:{e}": v for (g, e), v in sorted(assignment.certificate().items())}
    if args.certificate:
        with open(args.certificate, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        _print_json(doc)
    return EXIT_OK


def cmd_adversary(args) -> int:
    from .adversaries import gen_fifo_instability, gen_ntg_instability, gen_random_admissible
    from .network import load_network, save_trace

    if args.kind == "random":
        if not args.net:
            raise ValueError("--net is required for the random adversary")
        trace = gen_random_admissible(load_network(args.net), args.w, args.r, args.horizon, args.seed)
    elif args.kind == "fifo-g":
        trace = gen_fifo_instability(args.r, args.s0, args.phases, with_paths=args.with_paths)
    else:
        trace = gen_ntg_instability(args.r, args.s0, args.phases, with_paths=args.with_paths)
    save_trace(trace, args.out)
    log.info("wrote %d injections to %s", len(trace), args.out)
    return EXIT_OK


def cmd_ring(args) -> int:
    from .network import load_trace
    from .ring import (compute_ring_params, interval_max_loads, route_offline_derand, route_online_derand,
                       route_random)

    params = compute_ring_params(args.r, args.n, args.c, args.beta)
    trace = load_trace(args.trace)
    packets = trace.packets()
    if args.mode == "random":
        rings = route_random(packets, params, args.seed)
    elif args.mode == "offline":
        rings = route_offline_derand(packets, params).rings
    else:
        order = sorted(packets, key=lambda p: (p.inject_time, p.id))
        routing = route_online_derand(order, params)
        by_id = {p.id: j for p, j in zip(order, routing.rings)}
        rings = [by_id[p.id] for p in packets]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        wr = csv.writer(out)
        wr.writerow(["packet_id", "inject_time", "src", "dst", "ring"])
        for p, j in zip(packets, rings):
            wr.writerow([p.id, p.inject_time, p.source, p.dest, j])
    finally:
        if args.out:
            out.close()
    if args.loads:
        with open(args.loads, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["interval", "max_link_load", "bound"])
            for k, v in interval_max_loads(params, packets, rings).items():
                wr.writerow([k, v, params.load_bound])
    log.info("W=%d R=%.6f load bound %d", params.W, params.R, params.load_bound)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .experiment import run

    with open(args.config) as fh:
        config = json.load(fh)
    if args.out:
        config["output"] = os.path.abspath(args.out)
    result = run(config, base=os.path.dirname(os.path.abspath(args.config)))
    _print_json(result.summary)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aqroute", description="Adversarial queueing: routing, scheduling, stability.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("admissibility", help="check a path-annotated trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--w", type=int, required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--weak", action="store_true", help="use the fixed window partition")
    p.set_defaults(func=cmd_admissibility)

    p = sub.add_parser("route", help="assign congestion-based source routes")
    p.add_argument("--net", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--R", type=float, required=True)
    p.add_argument("--w", type=int, required=True)
    p.add_argument("--variant", choices=["perpacket", "batched", "inband"], default="perpacket")
    p.add_argument("--out", help="routed trace (JSON Lines); stdout if omitted")
    p.add_argument("--diagnostics", help="per-window CSV of phase, window, D, max load")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("schedule", help="deadline scheduling with EDF service")
    p.add_argument("--net", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--mode", choices=["random", "derand"], default="derand")
    p.add_argument("--T", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--w", type=int, default=1)
    p.add_argument("--d-max", dest="d_max", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="delays.csv")
    p.add_argument("--certificate", help="JSON certificate path; stdout if omitted")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("adversary", help="generate an injection trace")
    p.add_argument("--kind", choices=["random", "fifo-g", "ntg-g"], required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--s0", type=int, default=1000)
    p.add_argument("--phases", type=int, default=5)
    p.add_argument("--net")
    p.add_argument("--w", type=int, default=50)
    p.add_argument("--horizon", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--with-paths", action="store_true", help="include witness paths (network G kinds)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_adversary)

    p = sub.add_parser("ring", help="route a trace on a ring with parallel links")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--c", type=int, required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--mode", choices=["random", "offline", "online"], default="online")
    p.add_argument("--trace", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="ring assignments CSV; stdout if omitted")
    p.add_argument("--loads", help="per-interval maximum load CSV")
    p.set_defaults(func=cmd_ring)

    p = sub.add_parser("simulate", help="run an experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides the config)")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SimulationError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except InstabilityCap as exc:
        print(f"instability cap reached: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
