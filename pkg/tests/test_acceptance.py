"""Acceptance criteria, each run at its stated tolerance.

Every test records one PASS/FAIL line through the ``acceptance`` fixture;
the lines are printed in the terminal summary.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import pytest

from aqroute.adversaries import build_network_g, gen_random_admissible, gen_random_bundles, run_instability
from aqroute.admissibility import check_strong, check_weak, weak_to_strong_params
from aqroute.deadlines import (assign_deadlines_derandomized, assign_deadlines_random, beta_condition,
                               verify_deadline_condition)
from aqroute.engine import InBandConcrete, Simulation, fifo_order_violations
from aqroute.network import Injection, InjectionTrace
from aqroute.ring import (OnlineRingRouter, build_parallel_ring, compute_ring_params, gen_ring_injections,
                          interval_max_loads, route_offline_derand, route_online_derand, route_random)
from aqroute.routing import SourceRouter, Variant, compute_params
from aqroute.schedulers import GREEDY_RULES, Rule

from support import random_network, toy_instance

R_ADV, W_ADV, R_ROUTE = 0.5, 50, 0.75
NUM_NETWORKS = 20
D_SLACK = 1e-9


# -- criteria 1 and 2 ---------------------------------------------------------------------

def _theorem1_network(variant: Variant, seed: int):
    rng = np.random.default_rng(1000 + seed)
    if variant is Variant.PER_PACKET:
        n = int(rng.integers(2, 11))
        m = int(rng.integers(n, 21))
    else:
        # batched and in-band phases last t = O(m^2 log m) windows; small networks keep runs short
        n = int(rng.integers(2, 5))
        m = int(rng.integers(n, 6))
    return random_network(rng, n, m)


@lru_cache(maxsize=None)
def theorem1_runs(variant: Variant) -> list:
    """One full routing phase per random network: (network, params, diagnostics)."""
    runs = []
    for seed in range(NUM_NETWORKS):
        net = _theorem1_network(variant, seed)
        params = compute_params(R_ADV, R_ROUTE, W_ADV, net.m, variant)
        router = SourceRouter(net, params)
        windows = gen_random_bundles(net, W_ADV, R_ADV, params.t, seed=seed)
        for k, bundle in enumerate(windows):
            for path, count in bundle:
                src, dst = net.tail(path[0]), net.head(path[-1])
                if variant is Variant.PER_PACKET:
                    for _ in range(count):
                        router.route(src, dst, k * W_ADV)
                else:
                    router.route(src, dst, k * W_ADV, count)
        router.finish_phases()
        runs.append((net, params, router.phases))
    return runs


@pytest.mark.parametrize("variant", list(Variant), ids=lambda v: v.value)
def test_criterion_1_load_and_potential_bounds(variant, acceptance):
    load_bad, d_bad, phases, worst_ratio, worst_d = 0, 0, 0, 0.0, 0.0
    for net, params, diags in theorem1_runs(variant):
        assert diags, "no phase completed"
        for diag in diags:
            phases += 1
            load_bad += int(diag.max_load > params.load_bound)
            d_bad += int(diag.D_final > 1 + D_SLACK)
            worst_ratio = max(worst_ratio, diag.max_load / params.load_bound)
            worst_d = max(worst_d, diag.D_final)
    ok = load_bad == 0 and d_bad == 0
    acceptance(1, ok, f"{variant.value}: {phases} phases, load violations {load_bad}, "
                      f"max load/(t w R) {worst_ratio:.3f}, D_t violations {d_bad}, max D_t {worst_d:.3g}")
    assert ok


@pytest.mark.parametrize("variant", list(Variant), ids=lambda v: v.value)
def test_criterion_2_potential_growth_per_window(variant, acceptance):
    bad, windows = 0, 0
    for net, params, diags in theorem1_runs(variant):
        for diag in diags:
            windows += len(diag.log_D) - 1
            bad += len(diag.d_growth_violations(params, slack=D_SLACK))
    acceptance(2, bad == 0, f"{variant.value}: {windows} windows, {bad} violations of D_i <= D_(i-1)/(1-r mu)")
    assert bad == 0


# -- criterion 3 ---------------------------------------------------------------------------

def _edge_heavy_trace(net, w: int, r: float, horizon: int, rng) -> InjectionTrace:
    """Weakly admissible trace with injections packed against window boundaries."""
    from aqroute.adversaries import random_window_bundles

    cap = math.floor(w * r + 1e-12)
    events = []
    for start in range(0, horizon, w):
        for path, k in random_window_bundles(net, cap, rng, 2 * net.m):
            mode = int(rng.integers(3))
            for _ in range(k):
                t = start if mode == 0 else start + w - 1 if mode == 1 else int(rng.integers(start, start + w))
                events.append((t, path))
    events.sort(key=lambda ev: ev[0])
    return InjectionTrace([Injection(t, net.tail(p[0]), net.head(p[-1]), p) for t, p in events])


def test_criterion_3_weak_to_strong_round_trip(acceptance):
    w, r = 10, 0.5
    w2, r2 = weak_to_strong_params(w, r)
    assert (w2, r2) == (40, 0.75)
    rng = np.random.default_rng(3)
    checked, failures = 0, 0
    while checked < 1000:
        n = int(rng.integers(2, 6))
        net = random_network(rng, n, int(rng.integers(n, 9)))
        horizon = int(rng.integers(w, 30 * w))
        if checked % 2:
            trace = _edge_heavy_trace(net, w, r, horizon, rng)
        else:
            trace = gen_random_admissible(net, w, r, horizon, int(rng.integers(1 << 30)))
        if not check_weak(trace, w, r).admissible:
            continue
        checked += 1
        failures += int(not check_strong(trace, w2, r2).admissible)
    acceptance(3, failures == 0, f"{checked} weakly (10, 0.5)-admissible traces, {failures} fail strong (40, 0.75)")
    assert failures == 0


# -- criterion 4 ---------------------------------------------------------------------------

def _edf_run(net, params, packets):
    sim = Simulation(net, Rule.EDF, hold=params.M, check_invariants=True)
    sim.inject_all(packets)
    sim.drain()
    return sim.report()


def test_criterion_4_deadline_certificates(acceptance):
    instances, conditioned, misses, late, cert_needed, cert_bad, h_up, delays = 0, 0, 0, 0, 0, 0, 0, []
    for seed in range(50):
        net, params, packets = toy_instance(seed)
        instances += 1
        for mode in ("derand", "random"):
            pk = [type(p)(p.id, p.inject_time, p.source, p.dest, p.path) for p in packets]
            if mode == "derand":
                assignment = assign_deadlines_derandomized(pk, params, range(net.m))
                if beta_condition(pk, params, range(net.m)):
                    cert_needed += 1
                    cert_bad += int(any(v >= 0 for v in assignment.certificate().values()))
                h_up += len(assignment.h_increases())
            else:
                assignment = assign_deadlines_random(pk, params, seed)
            assignment.apply(pk)
            if not verify_deadline_condition(pk, assignment).ok:
                continue
            conditioned += 1
            report = _edf_run(net, params, pk)
            assert report.delivered == len(pk)
            misses += len(report.deadline_misses)
            final = {p.id: p.deadlines[-1] for p in pk if p.path}
            for d in report.deliveries:
                if d.packet_id in final and d.deliver_time > final[d.packet_id]:
                    late += 1
                delays.append(d.delay)
                late += int(d.delay > 2 * params.M)
    ok = instances >= 50 and misses == 0 and late == 0 and cert_bad == 0 and h_up == 0 and cert_needed > 0
    acceptance(4, ok, f"{instances} instances, {conditioned} assignments meeting the deadline condition, "
                      f"{misses} deadline misses, {late} late deliveries, max delay {max(delays, default=0)}; "
                      f"certificate required on {cert_needed}, failed on {cert_bad}, h increases {h_up}")
    assert ok


# -- criteria 5 and 6 ----------------------------------------------------------------------

def _routed_instability(kind: str, r: float, R: float, variant: Variant):
    net = build_network_g()
    params = compute_params(r, R, 50, net.m, variant)
    return run_instability(kind, r, 1000, 5, router=SourceRouter(net, params))


def _instability_verdict(run, factor: float) -> tuple:
    sizes = run.sizes
    growth_bad = [i for i in range(5) if sizes[i + 1] < math.floor(factor * sizes[i]) - 3]
    totals = [p.total_queued for p in run.phases]
    rising = len(totals) == 5 and all(b > a for a, b in zip(totals, totals[1:]))
    ok = len(sizes) == 6 and not growth_bad and rising and run.burst <= 1 + 1e-9
    return ok, f"s={sizes}, short phases {growth_bad}, totals rising {rising}"


def test_criterion_5_fifo_instability_under_source_routing(acceptance):
    verdicts = []
    for variant in Variant:
        run = _routed_instability("fifo", 0.95, 0.975, variant)
        ok, detail = _instability_verdict(run, 1.297)
        verdicts.append(ok)
        acceptance(5, ok, f"{variant.value}: {detail}")
    assert all(verdicts)


def test_criterion_6_ntg_instability(acceptance):
    verdicts = []
    for variant in Variant:
        run = _routed_instability("ntg", 0.8, 0.9, variant)
        ok, detail = _instability_verdict(run, 1.28)
        verdicts.append(ok)
        acceptance(6, ok, f"{variant.value}: {detail}")
    run = run_instability("ntg", 0.8, 1000, 5)
    ok, detail = _instability_verdict(run, 1.28)
    verdicts.append(ok)
    acceptance(6, ok, f"witness paths: {detail}")
    assert all(verdicts)


# -- criteria 7 and 8 ----------------------------------------------------------------------

RING = dict(r=0.75, n=8, c=3, beta=0.9)


@lru_cache(maxsize=None)
def ring_trace(intervals: int, seed: int):
    params = compute_ring_params(**RING)
    return params, gen_ring_injections(params, intervals, seed)


def test_criterion_7_ring_derandomization(acceptance):
    params, trace = ring_trace(20, 7)
    assert params.W == 211 and params.load_bound == 197
    assert check_weak(trace, params.W, params.r).admissible
    packets = trace.packets()
    offline = route_offline_derand(packets, params)
    online = route_online_derand(packets, params)
    order = sorted(packets, key=lambda p: (p.inject_time, p.id))
    off_loads = interval_max_loads(params, packets, offline.rings)
    on_loads = interval_max_loads(params, order, online.rings)
    off_bad = sum(v > params.load_bound for v in off_loads.values())
    on_bad = sum(v > params.load_bound for v in on_loads.values())
    gap = max(online.swap_gaps)
    h_bad = len(offline.h_increases()) + len(online.h_increases())
    ok = off_bad == 0 and on_bad == 0 and h_bad == 0 and gap <= 1e-12 and len(off_loads) == 20
    acceptance(7, ok, f"W={params.W}, {len(packets)} packets over {len(off_loads)} intervals; max load offline "
                      f"{max(off_loads.values())}, online {max(on_loads.values())} (bound {params.load_bound}); "
                      f"h increases {h_bad}; max swap gap {gap:.1e}")
    assert ok


def test_criterion_8_random_ring_baseline(acceptance):
    params, trace = ring_trace(200, 8)
    packets = trace.packets()
    rings = route_random(packets, params, seed=8)
    loads = interval_max_loads(params, packets, rings)
    over = sum(v > params.threshold for v in loads.values())
    frac = over / len(loads)
    ok = len(loads) == 200 and frac <= params.beta
    acceptance(8, ok, f"statistical: {over}/{len(loads)} intervals exceed (1+eps) r W = {params.threshold:.2f}, "
                      f"fraction {frac:.3f} <= beta {params.beta}")
    assert ok


# -- criterion 9 ---------------------------------------------------------------------------

def _unit_capacity_ok(events) -> bool:
    sends = [(s, e) for s, e, _, kind in events if kind == "send"]
    return len(sends) == len(set(sends))


def _simulate_routed(net, variant: Variant, rule: Rule, w: int, horizon: int, concrete: bool):
    params = compute_params(R_ADV, R_ROUTE, w, net.m, variant)
    router = SourceRouter(net, params)
    sim = Simulation(net, rule, router=router, record_events=True, check_invariants=True)
    hook = None
    if concrete:
        hook = InBandConcrete(router)
        hook.attach(sim)
    trace = gen_random_admissible(net, w, R_ADV, horizon, seed=net.m)
    packets = [type(p)(p.id, p.inject_time, p.source, p.dest) for p in trace.packets()]
    sim.inject_all(packets)
    sim.drain()
    return sim, hook


def test_criterion_9_engine_invariants(acceptance):
    checks = []

    # routed runs in the style of criterion 1, every variant, plus concrete in-band control traffic
    for variant in Variant:
        net = _theorem1_network(variant, 0)
        a, _ = _simulate_routed(net, variant, Rule.LIS, W_ADV, 40 * W_ADV, False)
        b, _ = _simulate_routed(net, variant, Rule.LIS, W_ADV, 40 * W_ADV, False)
        checks.append((f"routed {variant.value}", a.delivered == a.injected and _unit_capacity_ok(a.events)
                       and a.events == b.events))
    net = random_network(np.random.default_rng(9), 3, 4)
    a, hook = _simulate_routed(net, Variant.IN_BAND, Rule.FIFO, 400, 20 * 400, True)
    b, _ = _simulate_routed(net, Variant.IN_BAND, Rule.FIFO, 400, 20 * 400, True)
    checks.append(("concrete in-band", a.delivered == a.injected and a.ctrl_delivered == a.ctrl_injected > 0
                   and not hook.late and _unit_capacity_ok(a.events) and a.events == b.events))

    # FIFO service order on a routed run
    net = _theorem1_network(Variant.PER_PACKET, 1)
    fifo, _ = _simulate_routed(net, Variant.PER_PACKET, Rule.FIFO, W_ADV, 40 * W_ADV, False)
    checks.append(("fifo order", not fifo_order_violations(fifo.events)))

    # deadline runs of criterion 4
    for seed in range(3):
        net, params, packets = toy_instance(seed)
        reports = []
        for _ in range(2):
            pk = [type(p)(p.id, p.inject_time, p.source, p.dest, p.path) for p in packets]
            assignment = assign_deadlines_derandomized(pk, params, range(net.m))
            assignment.apply(pk)
            sim = Simulation(net, Rule.EDF, hold=params.M, record_events=True, check_invariants=True)
            sim.inject_all(pk)
            sim.drain()
            reports.append(sim)
        a, b = reports
        checks.append((f"edf {seed}", a.delivered == a.injected and _unit_capacity_ok(a.events)
                       and a.events == b.events))

    # instability runs of criteria 5 and 6 (invariants are checked every step inside run_instability)
    for kind, r in (("fifo", 0.95), ("ntg", 0.8)):
        x = run_instability(kind, r, 300, 3)
        y = run_instability(kind, r, 300, 3)
        checks.append((f"{kind} witness", x.sizes == y.sizes and x.report.queue_series == y.report.queue_series))

    # ring routes of criterion 7 under every greedy rule for 10 W steps
    params = compute_ring_params(**RING)
    net = build_parallel_ring(params.n, params.c)
    trace = gen_ring_injections(params, 10, 9)
    for rule in GREEDY_RULES:
        runs = []
        for _ in range(2):
            sim = Simulation(net, rule, router=OnlineRingRouter(params), record_events=True, check_invariants=True)
            sim.inject_all([type(p)(p.id, p.inject_time, p.source, p.dest) for p in trace.packets()])
            sim.drain()
            runs.append(sim)
        a, b = runs
        checks.append((f"ring {rule.value}", a.delivered == a.injected and _unit_capacity_ok(a.events)
                       and a.events == b.events))

    bad = [name for name, ok in checks if not ok]
    acceptance(9, not bad, f"{len(checks)} runs checked for conservation, unit capacity and determinism; "
                           f"failing: {bad or 'none'}")
    assert not bad
