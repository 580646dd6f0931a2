"""Source routing on a ring with ``c`` parallel links per hop.

Each packet is sent along one of the ``c`` single rings. Time is cut into
intervals of ``W`` steps and the goal is that no link carries more than
``(1 + eps) r W`` packets of one interval, where ``eps = 1 - r``.

Three routers are provided: a uniform random choice, an offline greedy
derandomization that sees the whole interval, and an online version that
starts from a pool of pessimistic ghost packets and swaps them out as real
packets arrive. Both greedy routers minimise, packet by packet,

    h = sum over links e of (1+eps)^D_e (1+eps/c)^U_hop(e) / (1+eps)^((1+eps) r W)

where ``D_e`` counts decided packets on link ``e`` and ``U_hop`` counts
undecided packets crossing that hop. ``1 + eps/c`` is the exact
expectation of ``(1+eps)^X`` for a uniform ring choice, which makes the
average over choices equal to the current ``h``; the greedy choice can
therefore never raise it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .network import Injection, InjectionTrace, Network, Packet, build_network

H_SLACK = 1e-12


@dataclass(frozen=True)
class RingParams:
    n: int
    c: int
    r: float
    beta: float
    W: int
    R: float

    @property
    def ring_epsilon(self) -> float:
        return 1 - self.r

    @property
    def threshold(self) -> float:
        """``(1 + eps) r W``, equal to ``R W``."""
        return (1 + self.ring_epsilon) * self.r * self.W

    @property
    def load_bound(self) -> int:
        return math.floor(self.R * self.W + 1e-9)

    @property
    def ghosts_per_hop(self) -> int:
        return math.floor(self.c * self.r * self.W + 1e-9)


def compute_ring_params(r: float, n: int, c: int, beta: float) -> RingParams:
    if not 0 < r < 1:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if n < 2 or c < 1:
        raise ValueError("need n >= 2 and c >= 1")
    eps = 1 - r
    W = math.ceil(3 / (r * eps * eps) * math.log(n * c / beta))
    return RingParams(n, c, r, beta, W, 1 - eps * eps)


def build_parallel_ring(n: int, c: int) -> Network:
    """Link ``i*c + j - 1`` joins node ``i`` to ``i+1 mod n`` on single ring ``j`` (1-based)."""
    return build_network([(i, (i + 1) % n, f"{i}:{j}") for i in range(n) for j in range(1, c + 1)], n)


def ring_hops(n: int, src: int, dst: int) -> tuple:
    """Hops ``src, src+1, ..., dst-1`` (mod n)."""
    if src == dst:
        raise ValueError("source and destination coincide")
    return tuple((src + k) % n for k in range((dst - src) % n))


def ring_path(n: int, c: int, src: int, dst: int, ring: int) -> tuple:
    if not 1 <= ring <= c:
        raise ValueError(f"ring must lie in 1..{c}, got {ring}")
    return tuple(h * c + ring - 1 for h in ring_hops(n, src, dst))


def link_loads(params: RingParams, packets, rings) -> np.ndarray:
    """``(n, c)`` array of packets routed along each link."""
    loads = np.zeros((params.n, params.c), dtype=np.int64)
    for p, j in zip(packets, rings):
        for h in ring_hops(params.n, p.source, p.dest):
            loads[h, j - 1] += 1
    return loads


def interval_max_loads(params: RingParams, packets, rings) -> dict:
    """Interval index -> largest per-link load among its packets."""
    by_interval: dict = {}
    for p, j in zip(packets, rings):
        by_interval.setdefault(p.inject_time // params.W, []).append((p, j))
    return {k: int(link_loads(params, [p for p, _ in v], [j for _, j in v]).max())
            for k, v in sorted(by_interval.items())}


def route_random(packets, params: RingParams, seed=None) -> list:
    """Uniform independent ring per packet."""
    rng = np.random.default_rng(seed)
    packets = list(packets)
    for p in packets:
        ring_hops(params.n, p.source, p.dest)
    return (rng.integers(params.c, size=len(packets)) + 1).tolist()


class RingEstimator:
    """Log-space pessimistic estimator over the ``n * c`` links of one interval."""

    def __init__(self, params: RingParams):
        self.params = params
        eps = params.ring_epsilon
        self.log_dec = math.log1p(eps)
        self.log_und = math.log1p(eps / params.c)
        self.log_den = params.threshold * math.log1p(eps)
        self.decided = np.zeros((params.n, params.c), dtype=np.int64)
        self.undecided = np.zeros(params.n, dtype=np.int64)

    def _log_h(self, decided: np.ndarray, undecided: np.ndarray) -> float:
        terms = decided * self.log_dec + (undecided * self.log_und)[:, None] - self.log_den
        top = terms.max()
        return float(top + math.log(np.exp(terms - top).sum()))

    def log_h(self) -> float:
        return self._log_h(self.decided, self.undecided)

    def log_h_split(self, ghosts: np.ndarray, real: np.ndarray) -> float:
        """``log h`` with the undecided factor taken separately over ghosts and real packets."""
        terms = (self.decided * self.log_dec + (ghosts * self.log_und)[:, None]
                 + (real * self.log_und)[:, None] - self.log_den)
        top = terms.max()
        return float(top + math.log(np.exp(terms - top).sum()))

    def choose(self, hops: tuple) -> tuple:
        """Best ring for an undecided packet crossing ``hops``, and the resulting log h."""
        idx = list(hops)
        undecided = self.undecided.copy()
        undecided[idx] -= 1
        best, best_val = 0, math.inf
        for j in range(self.params.c):
            decided = self.decided.copy()
            decided[idx, j] += 1
            val = self._log_h(decided, undecided)
            if j == 0 or val < best_val - H_SLACK * max(1.0, abs(best_val)):
                best, best_val = j, val
        return best + 1, best_val

    def fix(self, hops: tuple, ring: int) -> None:
        idx = list(hops)
        self.undecided[idx] -= 1
        self.decided[idx, ring - 1] += 1


@dataclass
class RingRouting:
    rings: list
    log_h: dict = field(default_factory=dict)  # interval -> trajectory of log h
    swap_gaps: list = field(default_factory=list)  # |log h after swap - before|

    def h_increases(self, rel: float = H_SLACK) -> list:
        bad = []
        for k, traj in self.log_h.items():
            for i in range(1, len(traj)):
                if traj[i] > traj[i - 1] + rel * max(1.0, abs(traj[i - 1])):
                    bad.append((k, i))
        return bad


def route_offline_derand(packets, params: RingParams) -> RingRouting:
    """Hold each interval's packets to its last step, then fix rings greedily in (inject_time, id) order."""
    packets = list(packets)
    order = sorted(range(len(packets)), key=lambda i: (packets[i].inject_time, packets[i].id))
    rings = [0] * len(packets)
    out = RingRouting(rings)
    by_interval: dict = {}
    for i in order:
        by_interval.setdefault(packets[i].inject_time // params.W, []).append(i)
    for k, idxs in sorted(by_interval.items()):
        est = RingEstimator(params)
        hops = [ring_hops(params.n, packets[i].source, packets[i].dest) for i in idxs]
        for hs in hops:
            est.undecided[list(hs)] += 1
        traj = [est.log_h()]
        for i, hs in zip(idxs, hops):
            ring, _ = est.choose(hs)
            est.fix(hs, ring)
            rings[i] = ring
            traj.append(est.log_h())
        out.log_h[k] = traj
    return out


class GhostUnderflow(RuntimeError):
    """A packet needed a ghost that was not left: the input is not admissible."""


class OnlineRingRouter:
    """Routes each packet at injection, trading ghost packets for real ones."""

    def __init__(self, params: RingParams):
        self.params = params
        self.interval: Optional[int] = None
        self.est: Optional[RingEstimator] = None
        self.ghosts = np.zeros(params.n, dtype=np.int64)
        self.routing = RingRouting([])
        self.loads: dict = {}  # interval -> (n, c) loads

    def _open(self, k: int) -> None:
        self._close()
        self.interval = k
        self.est = RingEstimator(self.params)
        self.ghosts = np.full(self.params.n, self.params.ghosts_per_hop, dtype=np.int64)
        self.est.undecided[:] = self.ghosts
        self.routing.log_h[k] = [self.est.log_h()]

    def _close(self) -> None:
        if self.est is None:
            return
        # Dropping the leftover ghosts only removes factors >= 1.
        self.est.undecided -= self.ghosts
        self.ghosts[:] = 0
        self.routing.log_h[self.interval].append(self.est.log_h())
        self.loads[self.interval] = self.est.decided.copy()

    def finish(self) -> None:
        self._close()
        self.est = None

    def route(self, src: int, dst: int, time: int) -> int:
        k = time // self.params.W
        if self.interval is None or k != self.interval:
            if self.interval is not None and k < self.interval:
                raise ValueError("injection times must be non-decreasing")
            self._open(k)
        hops = ring_hops(self.params.n, src, dst)
        idx = list(hops)
        if (self.ghosts[idx] < 1).any():
            raise GhostUnderflow(f"no ghost left on hops {hops} at time {time}")
        est = self.est
        before = est.log_h()
        # Swap: one ghost per crossed hop makes way for the real, still undecided packet.
        self.ghosts[idx] -= 1
        real = est.undecided - self.ghosts
        self.routing.swap_gaps.append(abs(est.log_h_split(self.ghosts, real) - before))
        ring, _ = est.choose(hops)
        est.fix(hops, ring)
        self.routing.log_h[k].append(est.log_h())
        self.routing.rings.append(ring)
        return ring

    def __call__(self, packet: Packet) -> tuple:
        ring = self.route(packet.source, packet.dest, packet.inject_time)
        return ring_path(self.params.n, self.params.c, packet.source, packet.dest, ring)


def route_online_derand(packets, params: RingParams) -> RingRouting:
    router = OnlineRingRouter(params)
    for p in sorted(packets, key=lambda p: (p.inject_time, p.id)):
        router.route(p.source, p.dest, p.inject_time)
    router.finish()
    return router.routing


def gen_ring_injections(params: RingParams, intervals: int, seed=None, *, fill: float = 1.0,
                        max_hops: Optional[int] = None) -> InjectionTrace:
    """Random injections, weakly (W, r)-admissible under witness single-ring paths.

    Each interval draws packets with random source and length until about
    ``fill`` of every link budget ``floor(r W)`` is used. The witness ring
    of each packet is stored as its path.
    """
    n, c, W = params.n, params.c, params.W
    cap = math.floor(params.r * W + 1e-9)
    max_hops = n - 1 if max_hops is None else max_hops
    rng = np.random.default_rng(seed)
    events = []
    for k in range(intervals):
        budget = np.full((n, c), cap, dtype=np.int64)
        target = int(fill * cap * n * c)
        used = 0
        misses = 0
        while used < target and misses < 200:
            src = int(rng.integers(n))
            length = int(rng.integers(1, max_hops + 1))
            hops = [(src + i) % n for i in range(length)]
            free = [j for j in range(c) if (budget[hops, j] > 0).all()]
            if not free:
                misses += 1
                continue
            j = free[int(rng.integers(len(free)))]
            budget[hops, j] -= 1
            used += length
            t = k * W + int(rng.integers(W))
            events.append((t, src, (src + length) % n, tuple(h * c + j for h in hops)))
    events.sort(key=lambda ev: ev[0])
    return InjectionTrace([Injection(*ev) for ev in events])
