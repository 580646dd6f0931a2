"""Online congestion-based source routing.

Each link carries a multiplicative congestion value c(e); packets follow
shortest paths under c. Three update disciplines are supported:

* ``PER_PACKET``: c(e) grows by a factor (1 + mu/w) on every routed path.
* ``BATCHED``: counts are accumulated and applied once per window.
* ``IN_BAND``: like ``BATCHED`` but updates reach the sources one window
  late, as when control packets travel through the network itself.

Congestion is kept as natural logs. With the batched step sizes the initial
value delta drops below the smallest positive double already for ten links.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .network import InjectionTrace, Injection, Network, Packet, shortest_paths_from

D_SLACK = 1e-9


def logsumexp(a, b=None) -> float:
    a = np.asarray(a, dtype=float)
    top = a.max()
    if top == -np.inf:
        return -math.inf
    z = np.exp(a - top)
    if b is not None:
        z = z * np.asarray(b, dtype=float)
    return float(top + math.log(z.sum()))


class Variant(str, enum.Enum):
    PER_PACKET = "perpacket"
    BATCHED = "batched"
    IN_BAND = "inband"


@dataclass(frozen=True)
class RoutingParams:
    r: float
    R: float
    w: int
    m: int
    variant: Variant
    mu: float
    log_delta: float
    t: int

    @property
    def delta(self) -> float:
        # May underflow to 0.0; log_delta is authoritative.
        return math.exp(self.log_delta)

    @property
    def phase_length(self) -> int:
        return self.t * self.w

    @property
    def load_bound(self) -> float:
        return self.t * self.w * self.R


def compute_params(r: float, R: float, w: int, m: int, variant=Variant.PER_PACKET) -> RoutingParams:
    variant = Variant(variant)
    if not 0 < r < R < 1:
        raise ValueError(f"need 0 < r < R < 1, got r={r}, R={R}")
    if m < 1 or w < 1:
        raise ValueError("m and w must be positive")
    mu = 1 - (r / R) ** (1 / 3)
    if variant is Variant.BATCHED:
        mu /= m
    elif variant is Variant.IN_BAND:
        mu /= 2 * m
    rmu = r * mu
    log_delta = math.log((1 - rmu) / m) / rmu
    # ln((1 - r mu) / (m delta)) evaluated without forming delta
    log_ratio = math.log(1 - rmu) - math.log(m) - log_delta
    t = math.floor((1 - rmu) / rmu * log_ratio) + 1
    return RoutingParams(r, R, w, m, variant, mu, log_delta, t)


@dataclass
class PhaseDiagnostics:
    """Per-phase record; ``log_D[i]`` is ln D_i with ``log_D[0]`` = ln(m delta)."""

    phase_index: int
    log_D: list
    loads: np.ndarray
    log_alpha: list = field(default_factory=list)

    @property
    def D_per_window(self) -> list:
        return [math.exp(x) for x in self.log_D[1:]]

    @property
    def D_final(self) -> float:
        return math.exp(self.log_D[-1])

    @property
    def max_load(self) -> int:
        return int(self.loads.max()) if self.loads.size else 0

    def d_growth_violations(self, params: RoutingParams, slack: float = D_SLACK) -> list:
        """Windows i with D_i > D_{i-1} / (1 - r mu), allowing relative slack."""
        step = -math.log1p(-params.r * params.mu) + math.log1p(slack)
        return [i for i in range(1, len(self.log_D)) if self.log_D[i] > self.log_D[i - 1] + step]

    def duality_violations(self, params: RoutingParams, slack: float = D_SLACK) -> list:
        """Windows with D_i / alpha_i < 1 / (r w)."""
        floor = -math.log(params.r * params.w) - math.log1p(slack)
        bad = []
        for i, la in enumerate(self.log_alpha, start=1):
            if la is not None and self.log_D[i] - la < floor:
                bad.append(i)
        return bad


@dataclass
class CongestionState:
    log_c: np.ndarray
    prev_log_c: np.ndarray
    pending_counts: np.ndarray
    lagged_counts: np.ndarray
    loads: np.ndarray
    window_index: int = 1
    phase_index: int = 0
    log_D: list = field(default_factory=list)
    log_alpha: list = field(default_factory=list)
    window_paths: dict = field(default_factory=dict)
    window_pairs: dict = field(default_factory=dict)
    lagged_pairs: dict = field(default_factory=dict)
    record_alpha: bool = False

    @property
    def c(self) -> np.ndarray:
        return np.exp(self.log_c)


def new_state(params: RoutingParams, *, record_alpha: bool = False) -> CongestionState:
    m = params.m
    log_c = np.full(m, params.log_delta)
    state = CongestionState(
        log_c=log_c,
        prev_log_c=log_c.copy(),
        pending_counts=np.zeros(m, dtype=np.int64),
        lagged_counts=np.zeros(m, dtype=np.int64),
        loads=np.zeros(m, dtype=np.int64),
        record_alpha=record_alpha,
    )
    state.log_D.append(float(logsumexp(log_c)))
    return state


def _least_congested(net: Network, log_c: np.ndarray, src: int, dst: int):
    paths = shortest_paths_from(net, log_c, src, log_weights=True)
    return paths.get(dst), paths


def route_packet(state: CongestionState, params: RoutingParams, net: Network, src: int, dst: int,
                 count: int = 1):
    """Pick the least congested path and apply the variant's bookkeeping.

    ``count > 1`` routes that many packets of the same pair in one call; it
    is only accepted by the batched and in-band variants, where congestion
    cannot change inside a window.
    """
    if src == dst:
        return ()
    if params.variant is Variant.PER_PACKET:
        if count != 1:
            raise ValueError("per-packet routing takes one packet at a time")
        path, _ = _least_congested(net, state.log_c, src, dst)
        if path is None:
            raise ValueError(f"node {dst} unreachable from {src}")
        step = math.log1p(params.mu / params.w)
        for e in path:
            state.log_c[e] += step
    else:
        # Congestion is frozen for the window, so one tree per source serves
        # every destination until the window closes.
        tree = state.window_paths.get(src)
        if tree is None:
            tree = shortest_paths_from(net, state.log_c, src, log_weights=True)
            state.window_paths[src] = tree
        path = tree.get(dst)
        if path is None:
            raise ValueError(f"node {dst} unreachable from {src}")
        for e in path:
            state.pending_counts[e] += count
    for e in path:
        state.loads[e] += count
    if state.record_alpha:
        state.window_pairs[(src, dst)] = state.window_pairs.get((src, dst), 0) + count
    return path


def _alpha(net: Network, log_c: np.ndarray, pairs: dict) -> Optional[float]:
    """ln of the summed least-path congestion over the packets in ``pairs``."""
    if not pairs:
        return None
    trees: dict = {}
    costs, mult = [], []
    for (src, dst), k in pairs.items():
        tree = trees.get(src)
        if tree is None:
            tree = trees[src] = shortest_paths_from(net, log_c, src, log_weights=True)
        costs.append(logsumexp(log_c[list(tree[dst])]))
        mult.append(k)
    return float(logsumexp(costs, b=mult))


def end_window(state: CongestionState, params: RoutingParams, net: Optional[Network] = None) -> None:
    """Apply the once-per-window update (batched and in-band variants only)."""
    if params.variant is Variant.PER_PACKET:
        raise ValueError("per-packet routing has no end-of-window update")
    _close_window(state, params, net)


def _close_window(state: CongestionState, params: RoutingParams, net: Optional[Network]) -> None:
    scale = params.mu / params.w
    if params.variant is Variant.BATCHED:
        state.log_c += np.log1p(state.pending_counts * scale)
        alpha_pairs = state.window_pairs
        state.pending_counts[:] = 0
    elif params.variant is Variant.IN_BAND:
        new = state.log_c.copy()
        hit = state.lagged_counts > 0
        if hit.any():
            inc = state.prev_log_c[hit] + np.log(state.lagged_counts[hit] * scale)
            new[hit] = np.logaddexp(state.log_c[hit], inc)
        state.prev_log_c = state.log_c
        state.log_c = new
        state.lagged_counts = state.pending_counts
        state.pending_counts = np.zeros(params.m, dtype=np.int64)
        alpha_pairs = state.lagged_pairs
        state.lagged_pairs = state.window_pairs
    else:
        alpha_pairs = state.window_pairs
    state.window_paths = {}
    state.log_D.append(float(logsumexp(state.log_c)))
    if state.record_alpha:
        if net is None:
            raise ValueError("alpha diagnostics need the network")
        state.log_alpha.append(_alpha(net, state.log_c, alpha_pairs))
    state.window_pairs = {}
    state.window_index += 1


def _quiescent(state: CongestionState, params: RoutingParams) -> bool:
    if state.pending_counts.any() or state.window_pairs:
        return False
    if params.variant is Variant.IN_BAND:
        return not state.lagged_counts.any() and not state.lagged_pairs and np.array_equal(
            state.prev_log_c, state.log_c)
    return True


def end_phase_check(state: CongestionState, params: RoutingParams) -> PhaseDiagnostics:
    """Return the finished phase's diagnostics and reset congestion to delta."""
    if len(state.log_D) != params.t + 1:
        raise ValueError(f"phase has {len(state.log_D) - 1} closed windows, expected {params.t}")
    diag = PhaseDiagnostics(state.phase_index, state.log_D, state.loads.copy(), state.log_alpha)
    fresh = new_state(params, record_alpha=state.record_alpha)
    fresh.phase_index = state.phase_index + 1
    state.__dict__.update(fresh.__dict__)
    return diag


def inband_control_plan(net: Network, pair_counts: dict, log_c: np.ndarray, *, first_id: int = 0,
                        time: int = 0) -> list:
    """Control packets announcing one window of routing decisions.

    One forward packet per active (src, dst) pair follows the pair's window
    path and carries its packet count. One broadcast packet per (link, node)
    carries the link's congestion from the link's tail to every other node
    along a minimum-hop path. At most n^2 + m n packets result.
    """
    packets = []
    pid = first_id
    for (src, dst), (path, count) in sorted(pair_counts.items()):
        if count <= 0 or src == dst:
            continue
        pkt = Packet(pid, time, src, dst, tuple(path), control=True, tag=f"fwd:{count}")
        packets.append(pkt)
        pid += 1
    return packets


def broadcast_plan(net: Network, log_c: np.ndarray, *, first_id: int = 0, time: int = 0) -> list:
    packets = []
    pid = first_id
    unit = [1.0] * net.m
    trees = {}
    for e in range(net.m):
        origin = net.tail(e)
        tree = trees.get(origin)
        if tree is None:
            tree = trees[origin] = shortest_paths_from(net, unit, origin)
        for v in sorted(tree):
            if v == origin:
                continue
            packets.append(Packet(pid, time, origin, v, tree[v], control=True,
                                  tag=f"bcast:{e}:{float(log_c[e])!r}"))
            pid += 1
    return packets


class SourceRouter:
    """Drives a congestion state through time.

    Windows are ``[kw, (k+1)w)`` and phases span ``t`` windows starting at
    time 0. Routing a packet first closes every window that ended before its
    injection time.
    """

    def __init__(self, net: Network, params: RoutingParams, *, record_alpha: bool = False):
        if params.m != net.m:
            raise ValueError("params.m does not match the network")
        self.net = net
        self.params = params
        self.state = new_state(params, record_alpha=record_alpha)
        self.phases: list = []
        self.window = 0  # global index of the open window
        self.routed = 0
        self.window_pair_counts: dict = {}
        self.closed_pair_counts: list = []
        self.on_window_close = None

    def _close(self) -> None:
        p = self.params
        counts = self.window_pair_counts
        self.window_pair_counts = {}
        if self.on_window_close is not None:
            self.on_window_close(self.window, counts, self.state)
        _close_window(self.state, p, self.net)
        self.window += 1
        if self.state.window_index > p.t:
            self.phases.append(end_phase_check(self.state, p))

    def advance_to(self, time: int) -> None:
        """Close all windows that end at or before ``time``."""
        p = self.params
        target = time // p.w
        while self.window < target:
            if _quiescent(self.state, p) and self.on_window_close is None:
                remaining = p.t - self.state.window_index  # windows left after the open one
                skip = min(target - self.window - 1, remaining)
                if skip > 0:
                    last = self.state.log_D[-1]
                    self.state.log_D.extend([last] * skip)
                    if self.state.record_alpha:
                        self.state.log_alpha.extend([None] * skip)
                    self.state.window_index += skip
                    self.window += skip
            self._close()

    def route(self, src: int, dst: int, time: int, count: int = 1):
        self.advance_to(time)
        path = route_packet(self.state, self.params, self.net, src, dst, count)
        self.routed += count
        if path:
            key = (src, dst)
            prev = self.window_pair_counts.get(key)
            self.window_pair_counts[key] = (path, (prev[1] if prev else 0) + count)
        return path

    def __call__(self, packet: Packet):
        return self.route(packet.source, packet.dest, packet.inject_time)

    def finish_phases(self) -> None:
        """Close windows through the end of the current phase if any routing happened in it."""
        p = self.params
        if self.state.window_index == 1 and not self.state.window_pairs and not self.state.loads.any():
            return
        phase_end = (self.window // p.t + 1) * p.t * p.w
        self.advance_to(phase_end)

    def route_trace(self, trace: InjectionTrace, *, complete_phases: bool = True) -> InjectionTrace:
        out = [Injection(ev.t, ev.src, ev.dst, self.route(ev.src, ev.dst, ev.t)) for ev in trace]
        if complete_phases:
            self.finish_phases()
        return InjectionTrace(out)
