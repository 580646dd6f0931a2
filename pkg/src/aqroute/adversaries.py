"""Injection generators: random admissible adversaries and the network G constructions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .admissibility import check_weak
from .network import Injection, InjectionTrace, Network, Packet, all_simple_paths, build_network


@lru_cache(maxsize=64)
def _candidate_paths(net: Network) -> tuple:
    paths = []
    for s in net.nodes:
        for d in net.nodes:
            if s != d:
                paths.extend(all_simple_paths(net, s, d))
    return tuple(paths)


def random_window_bundles(net: Network, cap: int, rng, bundles: int) -> list:
    """``(path, count)`` groups for one window; per-link totals stay within ``cap``."""
    paths = _candidate_paths(net)
    budget = [cap] * net.m
    out = []
    for choice, u in zip(rng.integers(len(paths), size=bundles).tolist(), rng.random(bundles).tolist()):
        path = paths[choice]
        room = min(budget[e] for e in path)
        if room == 0:
            continue
        k = 1 + int(u * room)
        for e in path:
            budget[e] -= k
        out.append((path, k))
    return out


def gen_random_bundles(net: Network, w: int, r: float, num_windows: int, seed=None, *,
                       bundles: int | None = None) -> list:
    """Per-window ``(path, count)`` lists of a weakly (w, r)-admissible adversary.

    This is the compressed form of :func:`gen_random_admissible`: injection
    times inside a window are left unspecified.
    """
    if not 0 < r < 1:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    cap = math.floor(w * r + 1e-12)
    if cap == 0 or not _candidate_paths(net):
        return [[] for _ in range(num_windows)]
    rng = np.random.default_rng(seed)
    bundles = 2 * net.m if bundles is None else bundles
    return [random_window_bundles(net, cap, rng, bundles) for _ in range(num_windows)]


def gen_random_admissible(net: Network, w: int, r: float, horizon: int, seed=None, *,
                          bundles: int | None = None) -> InjectionTrace:
    """Random path-annotated trace, weakly (w, r)-admissible by construction.

    Each partition window receives up to ``bundles`` groups of packets; a
    group picks one simple path and a random number of copies that fits the
    remaining per-link budget ``floor(w r)``.
    """
    if not 0 < r < 1:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    cap = math.floor(w * r + 1e-12)
    if cap == 0 or not _candidate_paths(net) or horizon <= 0:
        return InjectionTrace([])
    rng = np.random.default_rng(seed)
    bundles = 2 * net.m if bundles is None else bundles
    events = []
    for start in range(0, horizon, w):
        stop = min(start + w, horizon)
        for path, k in random_window_bundles(net, cap, rng, bundles):
            for t in rng.integers(start, stop, size=k):
                events.append((int(t), path))
    events.sort(key=lambda ev: ev[0])
    trace = InjectionTrace([Injection(t, net.tail(p[0]), net.head(p[-1]), p) for t, p in events])
    report = check_weak(trace, w, r)
    assert report.admissible, report
    return trace


# -- network G ------------------------------------------------------------------------

def g_node(name: str, half: int) -> int:
    """Node id of ``v``, ``w``, ``u`` or ``u'`` in half ``half``."""
    return 4 * half + ("v", "w", "u", "u'").index(name)


def build_network_g() -> Network:
    """Two mirrored halves; half j has e_j: v->w, f_j: w->u, f'_j: w->u', g_j: u->v', g'_j: u'->v'."""
    spec = []
    for j in (0, 1):
        v, w, u, u2 = (g_node(x, j) for x in ("v", "w", "u", "u'"))
        v_next = g_node("v", 1 - j)
        spec += [(v, w, f"e{j}"), (w, u, f"f{j}"), (w, u2, f"f'{j}"), (u, v_next, f"g{j}"), (u2, v_next, f"g'{j}")]
    return build_network(spec)


def g_link(net: Network, name: str, half: int) -> int:
    return net.link_by_label(f"{name}{half}")


def _witness_paths(net: Network, a: int) -> dict:
    """Admissible routes of every stream injected in a phase on half ``a``."""
    b = 1 - a
    L = lambda name, h: g_link(net, name, h)  # noqa: E731
    return {
        "S": (L("e", a), L("f", a)),
        "X": (L("e", a), L("f'", a), L("g'", a), L("e", b), L("f", b)),
        "Y": (L("e", a), L("f", a), L("g", a), L("e", b), L("f", b)),
        "hold_f": (L("f", a),),
        "hold_f'": (L("f'", a),),
        "merge": (L("e", b), L("f", b)),
    }


def _stream_endpoints(net: Network, stream: str, a: int) -> tuple:
    path = _witness_paths(net, a)[stream]
    return net.tail(path[0]), net.head(path[-1])


def is_slot(step: int, r: float) -> bool:
    """Global rate-r clock: one injection per stream at the steps where floor(r k) advances."""
    return math.floor(r * (step + 1)) > math.floor(r * step)


def fifo_growth(r: float) -> float:
    return r ** 3 + r ** 3 / (r + 1)


def ntg_growth(r: float) -> float:
    return 2 * r * r


def _check_rate(kind: str, r: float) -> None:
    if not 0 < r < 1:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    if kind == "ntg" and r <= 1 / math.sqrt(2):
        raise ValueError(f"NTG instability needs r > 1/sqrt(2), got {r}")


@dataclass
class PhaseRecord:
    index: int
    half: int
    start: int
    s: int
    lengths: tuple  # steps in subphases (1), (2), (3)
    x_size: int
    x_prime: int
    y_size: int
    s_next: int
    total_queued: int


@dataclass
class InstabilityRun:
    kind: str
    r: float
    s0: int
    phases: list
    trace: InjectionTrace  # every injection with its witness path
    burst: float  # excess over rate r after the initial burst
    report: Optional[object] = None  # SimReport of the coupled simulation

    @property
    def sizes(self) -> list:
        return [self.s0] + [p.s_next for p in self.phases]

    def growth_failures(self, factor: float, slack: int = 3) -> list:
        """Phases where ``s_next < floor(factor * s) - slack``."""
        return [p.index for p in self.phases if p.s_next < math.floor(factor * p.s) - slack]


class _Script:
    """Walks the phase schedule; ``sim`` (or analytic bounds when None) supplies set sizes."""

    def __init__(self, net: Network, kind: str, r: float, s0: int, sim=None, routed: bool = False):
        self.net, self.kind, self.r, self.sim, self.routed = net, kind, r, sim, routed
        self.s0 = s0
        self.now = 0
        self.next_id = 0
        self.events: list = []
        self.groups: dict = {}

    def emit(self, stream: str, a: int, group: Optional[str] = None) -> None:
        path = _witness_paths(self.net, a)[stream]
        src, dst = self.net.tail(path[0]), self.net.head(path[-1])
        self.events.append(Injection(self.now, src, dst, path))
        if self.sim is not None:
            pkt = Packet(self.next_id, self.now, src, dst, None if self.routed else path)
            self.sim.inject(pkt)
            if group is not None:
                self.groups.setdefault(group, []).append(self.next_id)
        self.next_id += 1

    def tick(self) -> None:
        if self.sim is not None:
            self.sim.run(self.now + 1)
        self.now += 1

    def subphase(self, steps: int, streams: list) -> int:
        slots = 0
        for _ in range(steps):
            if is_slot(self.now, self.r):
                slots += 1
                for stream, a, group in streams:
                    self.emit(stream, a, group)
            self.tick()
        return slots

    def _not_past(self, pids: list, hop: int) -> int:
        flights = self.sim.flights
        return sum(1 for pid in pids if pid in flights and flights[pid].hop <= hop)

    def run(self, phases: int) -> list:
        net, r = self.net, self.r
        for _ in range(self.s0):
            self.emit("S", 0)
        records = []
        s = self.s0
        for j in range(phases):
            a, b = j % 2, 1 - j % 2
            start = self.now
            self.groups = {}
            l1 = s
            x = self.subphase(l1, [("X", a, "X"), ("hold_f", a, None)])
            l2 = math.floor(r * s)
            y = self.subphase(l2, [("Y", a, "Y"), ("hold_f'", a, None)])
            if self.sim is not None:
                # X' is the part of X still short of the u/u' links
                x_prime = self._not_past(self.groups.get("X", []), 1)
            else:
                x_prime = math.floor(r * r * s / (r + 1)) if self.kind == "fifo" else math.floor(r * r * s)
            l3 = 0
            if self.kind == "fifo":
                l3 = x_prime + y
                self.subphase(l3, [("merge", a, None)])
                if self.sim is not None:
                    # Routes chosen by the system under test can serialise X' and Y
                    # on one link; keep merging until both have reached v_b.
                    pending = self.groups.get("X", []) + self.groups.get("Y", [])
                    while self._not_past(pending, 2):
                        self.subphase(1, [("merge", a, None)])
                        l3 += 1
                if self.sim is not None:
                    e_b, u_b = g_link(net, "e", b), g_node("u", b)
                    s_next = sum(1 for p in self.sim.queue_contents(e_b) if p.dest == u_b)
                else:
                    s_next = math.floor(fifo_growth(r) * s)
            else:
                if self.sim is not None:
                    s_next = self._not_past(self.groups.get("X", []) + self.groups.get("Y", []), 3)
                else:
                    s_next = math.floor(ntg_growth(r) * s)
            total = self.sim.queued if self.sim is not None else 0
            records.append(PhaseRecord(j, a, start, s, (l1, l2, l3), x, x_prime, y, s_next, total))
            s = s_next
            if s <= 0:
                break
        return records


def run_instability(kind: str, r: float, s0: int, num_phases: int, *, router=None,
                    queue_cap: Optional[int] = None, check_invariants: bool = True) -> InstabilityRun:
    """Drive the network G adversary against a live simulation.

    ``kind`` is ``"fifo"`` (FIFO service, three subphases) or ``"ntg"``
    (NTG service, no subphase (3)). With ``router`` set, packets carry only
    destinations and the router picks their paths; otherwise the witness
    paths are used. Phase lengths follow the set sizes observed in the run.
    """
    from .engine import Simulation
    from .schedulers import Rule

    kind = kind.lower()
    if kind not in ("fifo", "ntg"):
        raise ValueError(f"unknown instability kind {kind!r}")
    _check_rate(kind, r)
    if s0 < 1:
        raise ValueError("s0 must be >= 1")
    net = build_network_g()
    sim = Simulation(net, Rule.FIFO if kind == "fifo" else Rule.NTG, router=router,
                     queue_cap=queue_cap, check_invariants=check_invariants)
    script = _Script(net, kind, r, s0, sim=sim, routed=router is not None)
    phases = script.run(num_phases)
    trace = InjectionTrace(script.events)
    return InstabilityRun(kind, r, s0, phases, trace, _rate_burst(trace, s0, r), sim.report())


def _rate_burst(trace: InjectionTrace, s0: int, r: float) -> float:
    from .admissibility import burst
    return burst(InjectionTrace(trace.events[s0:]), r)


def _gen_instability(kind: str, r: float, s0: int, num_phases: int, with_paths: bool) -> InjectionTrace:
    _check_rate(kind, r)
    if s0 < 1:
        raise ValueError("s0 must be >= 1")
    net = build_network_g()
    script = _Script(net, kind, r, s0)
    script.run(num_phases)
    trace = InjectionTrace(script.events)
    excess = _rate_burst(trace, s0, r)
    assert excess <= 1 + 1e-9, f"rate-r injections exceed burst one ({excess})"
    if with_paths:
        return trace
    return InjectionTrace([Injection(ev.t, ev.src, ev.dst) for ev in trace])


def gen_fifo_instability(r: float, s0: int, num_phases: int, *, with_paths: bool = False) -> InjectionTrace:
    """Non-adaptive FIFO adversary on network G using the analytic set sizes.

    The first ``s0`` events are the initial burst at ``v0``. By default only
    destinations are exported so the system under test chooses the routes.
    """
    return _gen_instability("fifo", r, s0, num_phases, with_paths)


def gen_ntg_instability(r: float, s0: int, num_phases: int, *, with_paths: bool = False) -> InjectionTrace:
    """NTG counterpart of :func:`gen_fifo_instability` (no subphase (3))."""
    return _gen_instability("ntg", r, s0, num_phases, with_paths)
