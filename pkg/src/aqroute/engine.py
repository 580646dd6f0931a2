"""Discrete-time store-and-forward simulator.

Each step ``s`` runs three sub-phases:

(a) packets with ``inject_time == s`` enter the queue of their first link
    (or the M-interval store when deadlines are in use) and stored packets
    whose release time is ``s`` are queued;
(b) every link with a non-empty queue transmits one packet chosen by the
    active rule, control packets first;
(c) transmitted packets join the next queue with arrival step ``s + 1``, or
    are delivered. Delay is ``delivery step - inject_time + 1``.
"""

from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .network import Network, Packet
from .schedulers import QueueEntry, Rule, priority_key

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """An engine invariant failed."""


class InstabilityCap(RuntimeError):
    """Total queue size exceeded the configured cap."""


@dataclass
class Delivery:
    packet_id: int
    inject_time: int
    deliver_time: int
    control: bool = False

    @property
    def delay(self) -> int:
        return self.deliver_time - self.inject_time + 1


@dataclass
class DeadlineMiss:
    packet_id: int
    hop: int
    deadline: int
    served: int


@dataclass
class SimReport:
    injected: int
    delivered: int
    queued: int
    held: int
    steps: int
    queue_series: list
    max_link_queue: list
    deliveries: list
    deadline_misses: list
    control_sent: int = 0
    control_delivered: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def max_queue(self) -> int:
        return max((q for _, q in self.queue_series), default=0)

    @property
    def max_delay(self) -> int:
        return max((d.delay for d in self.deliveries if not d.control), default=0)

    def summary(self) -> dict:
        return {
            "injected": self.injected,
            "delivered": self.delivered,
            "queued": self.queued,
            "held": self.held,
            "steps": self.steps,
            "max_queue": self.max_queue,
            "max_delay": self.max_delay,
            "max_link_queue": self.max_link_queue,
            "deadline_misses": len(self.deadline_misses),
            "control_sent": self.control_sent,
            "control_delivered": self.control_delivered,
            **self.extra,
        }


class _Flight:
    __slots__ = ("packet", "hop", "arrival")

    def __init__(self, packet: Packet):
        self.packet = packet
        self.hop = 0
        self.arrival = 0


class Simulation:
    """Unit-capacity links, one packet per link per step.

    ``router`` is called on packets injected without a path. ``hold`` is the
    M-interval length of the deadline protocol: a packet injected in
    ``[(g-1)M, gM)`` is released to its first queue at step ``gM``.
    """

    def __init__(self, net: Network, rule=Rule.FIFO, *, router: Optional[Callable] = None,
                 hold: Optional[int] = None, queue_cap: Optional[int] = None,
                 record_events: bool = False, check_invariants: bool = True, hook=None):
        self.net = net
        self.rule = Rule(rule)
        self.router = router
        self.hold = hold
        self.queue_cap = queue_cap
        self.record_events = record_events
        self.check_invariants = check_invariants
        self.hook = hook
        self.now = 0
        self.queues: list = [[] for _ in range(net.m)]
        self.ctrl_queues: list = [[] for _ in range(net.m)]
        self.active: set = set()
        self._pending: list = []
        self._held: list = []
        self._seq = itertools.count()
        self.flights: dict = {}
        self.injected = 0
        self.delivered = 0
        self.ctrl_injected = 0
        self.ctrl_delivered = 0
        self.deliveries: list = []
        self.misses: list = []
        self.queue_series: list = []
        self.max_link_queue = np.zeros(net.m, dtype=np.int64)
        self.events: list = []  # (step, link, packet id, "arrive" | "send")
        self.on_deliver: Optional[Callable] = None

    # -- injection -----------------------------------------------------------------
    def inject(self, packet: Packet) -> None:
        if packet.inject_time < self.now:
            raise ValueError(f"packet {packet.id} injected at {packet.inject_time} < now {self.now}")
        if packet.deadlines is not None and self.rule is not Rule.EDF:
            log.debug("packet %d carries deadlines but rule is %s", packet.id, self.rule.value)
        heapq.heappush(self._pending, (packet.inject_time, next(self._seq), packet))

    def inject_all(self, packets) -> None:
        for p in packets:
            self.inject(p)

    # -- state views -------------------------------------------------------------------
    @property
    def queued(self) -> int:
        return sum(len(q) for q in self.queues)

    @property
    def held(self) -> int:
        return len(self._held)

    def queue_contents(self, link: int) -> list:
        return [item[-1].packet for item in self.queues[link]]

    def in_network(self) -> list:
        return [f.packet for f in self.flights.values() if not f.packet.control]

    def next_event_time(self) -> Optional[int]:
        times = []
        if self._pending:
            times.append(self._pending[0][0])
        if self._held:
            times.append(self._held[0][0])
        return min(times) if times else None

    @property
    def busy(self) -> bool:
        return bool(self.active)

    # -- stepping ------------------------------------------------------------------------
    def _enqueue(self, flight: _Flight, arrival: int) -> None:
        pkt = flight.packet
        e = pkt.path[flight.hop]
        flight.arrival = arrival
        if pkt.control:
            heapq.heappush(self.ctrl_queues[e], (arrival, pkt.id, next(self._seq), flight))
        else:
            deadline = pkt.deadlines[flight.hop] if pkt.deadlines is not None else 0
            entry = QueueEntry(pkt.id, pkt.inject_time, arrival, len(pkt.path) - flight.hop, deadline)
            heapq.heappush(self.queues[e], (priority_key(self.rule, entry), next(self._seq), flight))
            size = len(self.queues[e])
            if size > self.max_link_queue[e]:
                self.max_link_queue[e] = size
        self.active.add(e)
        if self.record_events:
            self.events.append((arrival, e, pkt.id, "arrive"))

    def _deliver(self, flight: _Flight, step: int) -> None:
        pkt = flight.packet
        del self.flights[pkt.id]
        self.deliveries.append(Delivery(pkt.id, pkt.inject_time, step, pkt.control))
        if pkt.control:
            self.ctrl_delivered += 1
        else:
            self.delivered += 1
        if self.on_deliver is not None:
            self.on_deliver(pkt, step)

    def _admit(self, pkt: Packet, s: int) -> None:
        if pkt.path is None:
            if self.router is None:
                raise ValueError(f"packet {pkt.id} has no path and no router is set")
            pkt.path = tuple(self.router(pkt))
        if pkt.id in self.flights:
            raise ValueError(f"duplicate packet id {pkt.id}")
        flight = _Flight(pkt)
        self.flights[pkt.id] = flight
        if pkt.control:
            self.ctrl_injected += 1
        else:
            self.injected += 1
        if not pkt.path:
            self._deliver(flight, s)
        elif self.hold is not None and not pkt.control:
            release = (pkt.inject_time // self.hold + 1) * self.hold
            heapq.heappush(self._held, (release, pkt.id, flight))
        else:
            self._enqueue(flight, s)

    def step(self) -> None:
        s = self.now
        if self.hook is not None:
            self.hook.before_step(self, s)
        # (a) injections and releases
        while self._pending and self._pending[0][0] == s:
            self._admit(heapq.heappop(self._pending)[2], s)
        while self._held and self._held[0][0] == s:
            self._enqueue(heapq.heappop(self._held)[2], s)
        # (b) one transmission per link
        sent = []
        for e in sorted(self.active):
            q = self.ctrl_queues[e] if self.ctrl_queues[e] else self.queues[e]
            flight = heapq.heappop(q)[-1]
            sent.append((e, flight))
            if not self.queues[e] and not self.ctrl_queues[e]:
                self.active.discard(e)
        if self.check_invariants and len({e for e, _ in sent}) != len(sent):
            raise SimulationError(f"step {s}: a link transmitted twice")
        # (c) forwarding and delivery
        for e, flight in sent:
            pkt = flight.packet
            if self.record_events:
                self.events.append((s, e, pkt.id, "send"))
            if pkt.deadlines is not None and not pkt.control and s > pkt.deadlines[flight.hop]:
                self.misses.append(DeadlineMiss(pkt.id, flight.hop, pkt.deadlines[flight.hop], s))
            flight.hop += 1
            if flight.hop == len(pkt.path):
                self._deliver(flight, s)
            else:
                self._enqueue(flight, s + 1)
        queued = self.queued
        self.queue_series.append((s, queued))
        if self.check_invariants:
            if self.delivered + queued + self.held != self.injected:
                raise SimulationError(
                    f"step {s}: conservation broken: delivered {self.delivered} + queued {queued} "
                    f"+ held {self.held} != injected {self.injected}")
        self.now = s + 1
        if self.queue_cap is not None and queued > self.queue_cap:
            raise InstabilityCap(f"step {s}: {queued} packets queued (cap {self.queue_cap})")

    def run(self, until: int) -> None:
        """Execute steps ``now .. until-1``, jumping over idle stretches."""
        while self.now < until:
            if not self.active:
                nxt = self.next_event_time()
                if self.hook is not None:
                    hook_next = self.hook.next_time(self, self.now)
                    if hook_next is not None:
                        nxt = hook_next if nxt is None else min(nxt, hook_next)
                if nxt is None:
                    self.now = until
                    break
                if nxt > self.now:
                    self.now = min(nxt, until)
                    continue
            self.step()

    def drain(self, limit: Optional[int] = None) -> None:
        """Run until nothing is pending, held or queued."""
        while self.active or self._pending or self._held:
            if limit is not None and self.now >= limit:
                break
            nxt = self.now + 1 if self.active else self.next_event_time()
            self.run(max(nxt, self.now + 1))

    def report(self, **extra) -> SimReport:
        return SimReport(
            injected=self.injected,
            delivered=self.delivered,
            queued=self.queued,
            held=self.held,
            steps=self.now,
            queue_series=list(self.queue_series),
            max_link_queue=self.max_link_queue.tolist(),
            deliveries=list(self.deliveries),
            deadline_misses=list(self.misses),
            control_sent=self.ctrl_injected,
            control_delivered=self.ctrl_delivered,
            extra=extra,
        )


def fifo_order_violations(events: list) -> list:
    """Links whose send order differs from their arrival order.

    Arrivals in the same step are ordered by packet id, as FIFO does.
    """
    arrivals: dict = {}
    sends: dict = {}
    for step, link, pid, kind in events:
        (arrivals if kind == "arrive" else sends).setdefault(link, []).append((step, pid))
    bad = []
    for link, sent in sends.items():
        order = [pid for _, pid in sorted(arrivals.get(link, []))]
        if [pid for _, pid in sent] != order[:len(sent)]:
            bad.append(link)
    return bad


CONTROL_ID_BASE = 1 << 40


class InBandConcrete:
    """Sends the in-band control traffic of a ``SourceRouter`` through the simulation.

    At the end of each window one forward packet per active pair is sent
    along the pair's path; ``tau = n^3 + m n^2`` steps later every link's
    congestion is broadcast from its tail to all other nodes. Forward
    packets must arrive within ``tau`` steps of sending and broadcasts
    within another ``tau``. Congestion updates themselves follow the
    one-window lag of the router, which these deadlines make sound.
    """

    def __init__(self, router):
        from .routing import Variant

        p, net = router.params, router.net
        if p.variant is not Variant.IN_BAND:
            raise ValueError("concrete control traffic needs the in-band variant")
        self.tau = net.n ** 3 + net.m * net.n ** 2
        if p.w < 2 * self.tau:
            raise ValueError(f"w={p.w} is below 2*tau={2 * self.tau} (tau = n^3 + m n^2)")
        if p.w * (1 - p.r) / 2 < net.n ** 2 + net.m * net.n:
            raise ValueError(f"w(1-r)/2 = {p.w * (1 - p.r) / 2} is below n^2 + m n = {net.n ** 2 + net.m * net.n}")
        self.router = router
        self.net = net
        self.w = p.w
        router.on_window_close = self._window_closed
        self._forward: list = []
        self._broadcasts: list = []  # (send step, log congestion snapshot)
        self.outstanding: dict = {}  # control packet id -> step by which it must be delivered
        self.next_id = CONTROL_ID_BASE
        self.sent_per_window: list = []
        self.late: list = []
        self._now = 0

    def _window_closed(self, window: int, pair_counts: dict, state) -> None:
        from .routing import inband_control_plan

        send = (window + 1) * self.w
        pkts = inband_control_plan(self.net, pair_counts, state.log_c, first_id=self.next_id, time=send)
        self.next_id += len(pkts)
        self._forward.extend(pkts)
        self._broadcasts.append((send + self.tau, state.log_c.copy()))
        self.sent_per_window.append(len(pkts) + self.net.m * (self.net.n - 1))

    def attach(self, sim: "Simulation") -> None:
        previous = sim.on_deliver

        def delivered(pkt, step):
            if pkt.control:
                deadline = self.outstanding.pop(pkt.id)
                if step >= deadline:
                    self.late.append((pkt.id, deadline, step))
            if previous is not None:
                previous(pkt, step)

        sim.on_deliver = delivered
        sim.hook = self

    def _send(self, sim: "Simulation", pkt: Packet, deadline: int) -> None:
        self.outstanding[pkt.id] = deadline
        sim.inject(pkt)

    def before_step(self, sim: "Simulation", s: int) -> None:
        from .routing import broadcast_plan

        if s % self.w == 0 and s > 0:
            self.router.advance_to(s)
        for pkt in self._forward:
            self._send(sim, pkt, s + self.tau)
        self._forward = []
        while self._broadcasts and self._broadcasts[0][0] == s:
            _, log_c = self._broadcasts.pop(0)
            pkts = broadcast_plan(self.net, log_c, first_id=self.next_id, time=s)
            self.next_id += len(pkts)
            for pkt in pkts:
                self._send(sim, pkt, s + self.tau)
        overdue = [pid for pid, deadline in self.outstanding.items() if deadline <= s]
        if overdue:
            raise SimulationError(f"step {s}: control packets {overdue[:5]} missed their delivery bound")

    def next_time(self, sim: "Simulation", now: int) -> Optional[int]:
        times = [(now // self.w + 1) * self.w if now % self.w else now]
        if self._broadcasts:
            times.append(self._broadcasts[0][0])
        return max(min(times), now)
