"""Deadline-driven store-and-forward scheduling.

Packets injected during ``[(g-1)M, gM)`` are held until ``gM``. Each gets
an initial deadline ``tau_0`` in ``[gM + T, (g+1)M - d_max T)`` and one
deadline per further link, spaced ``T`` apart. Links serve the smallest
deadline first.

The derandomized assigner fixes ``tau_0`` packet by packet, separately for
each initial link, by minimising a pessimistic estimator ``h`` of the
chance that some link sees more than ``(1 + eps/2) beta T`` deadlines of
the group in a window of length ``T``.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .network import Packet
from .schedulers import QueueEntry, Rule, priority_key

BETA_SLACK = 1e-9


@dataclass(frozen=True)
class SchedulerParams:
    epsilon: float
    m: int
    w: int
    d_max: int
    T: int
    M: int

    def interval(self, inject_time: int) -> int:
        """Index ``g`` of the interval in which a packet injected at ``inject_time`` is scheduled."""
        return inject_time // self.M + 1

    def draw_range(self, gamma: int) -> tuple:
        """Half-open integer range for ``tau_0`` of packets scheduled in interval ``gamma``."""
        return gamma * self.M + self.T, (gamma + 1) * self.M - self.d_max * self.T

    @property
    def choices(self) -> int:
        lo, hi = self.draw_range(0)
        return hi - lo

    @property
    def beta_scale(self) -> float:
        return self.M / (self.M - (self.d_max + 1) * self.T)

    def to_json(self) -> dict:
        return {"epsilon": self.epsilon, "m": self.m, "w": self.w, "d_max": self.d_max, "T": self.T, "M": self.M}


def t_for(epsilon: float, m: int, M: int) -> int:
    return math.ceil(36 * m / epsilon ** 3 * math.log(2 * M * m * m))


def m_for(epsilon: float, w: int, d_max: int, T: int) -> int:
    return max(math.ceil((1 - epsilon / 2) / (epsilon / 6) * (d_max + 1) * T), w)


def _check_inputs(epsilon: float, m: int, w: int, d_max: int) -> None:
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if m < 1 or w < 1 or d_max < 1:
        raise ValueError("m, w and d_max must be >= 1")


def compute_params(epsilon: float, m: int, w: int, d_max: int, *, max_iter: int = 1000) -> SchedulerParams:
    """Smallest (T, M) reached by alternating the two defining relations from M = max(w, 1)."""
    _check_inputs(epsilon, m, w, d_max)
    M = max(w, 1)
    T = t_for(epsilon, m, M)
    for _ in range(max_iter):
        M_next = max(M, m_for(epsilon, w, d_max, T))
        T_next = t_for(epsilon, m, M_next)
        if M_next == M and T_next == T:
            params = SchedulerParams(epsilon, m, w, d_max, T, M)
            assert params.choices > 0 and M - d_max * T > M / 2 + T
            return params
        M, T = M_next, T_next
    raise RuntimeError("deadline parameters did not converge")


def toy_params(epsilon: float, m: int, w: int, d_max: int, T: int, M: Optional[int] = None) -> SchedulerParams:
    """Desk-scale parameters for certificate mode.

    ``M`` defaults to the smallest value the M relation allows for this ``T``.
    Only a non-empty draw range is required; correctness then rests on the
    deadline condition holding for the actual trace.
    """
    _check_inputs(epsilon, m, w, d_max)
    if T < 1:
        raise ValueError("T must be >= 1")
    M = m_for(epsilon, w, d_max, T) if M is None else M
    params = SchedulerParams(epsilon, m, w, d_max, T, M)
    if M - (d_max + 1) * T <= 0:
        raise ValueError(f"empty draw range: M={M} <= (d_max+1)T={(d_max + 1) * T}")
    return params


# -- assignments -----------------------------------------------------------------------

@dataclass
class DeadlineAssignment:
    T: int
    tau0: dict = field(default_factory=dict)  # packet id -> initial deadline
    log_h: dict = field(default_factory=dict)  # (gamma, e0) -> [log h(empty), log h after each decision]

    def deadlines(self, packet: Packet) -> list:
        t0 = self.tau0[packet.id]
        return [t0 + k * self.T for k in range(len(packet.path))]

    def apply(self, packets) -> None:
        for p in packets:
            if p.path:
                p.deadlines = self.deadlines(p)

    def certificate(self) -> dict:
        """Final ``log h`` per group; negative means ``h < 1``."""
        return {key: traj[-1] for key, traj in self.log_h.items()}

    def h_increases(self, rel: float = 1e-9) -> list:
        """``(group, step)`` pairs where ``h`` went up."""
        bad = []
        for key, traj in self.log_h.items():
            for i in range(1, len(traj)):
                if traj[i] > traj[i - 1] + rel * max(1.0, abs(traj[i - 1])):
                    bad.append((key, i))
        return bad


def _routed(packets, params: SchedulerParams) -> list:
    out = []
    for p in packets:
        if p.path is None:
            raise ValueError(f"packet {p.id} has no path")
        if len(p.path) > params.d_max:
            raise ValueError(f"packet {p.id} path has {len(p.path)} links > d_max={params.d_max}")
        if p.path:
            out.append(p)
    return out


def assign_deadlines_random(packets, params: SchedulerParams, seed=None) -> DeadlineAssignment:
    """Independent uniform ``tau_0`` per packet, drawn in (inject_time, id) order."""
    rng = np.random.default_rng(seed)
    out = DeadlineAssignment(params.T)
    for p in sorted(_routed(packets, params), key=lambda p: (p.inject_time, p.id)):
        lo, hi = params.draw_range(params.interval(p.inject_time))
        out.tau0[p.id] = int(rng.integers(lo, hi))
    return out


def group_packets(packets, params: SchedulerParams) -> dict:
    """``(gamma, e0) -> packets`` ordered by (inject_time, id)."""
    groups = defaultdict(list)
    for p in _routed(packets, params):
        groups[(params.interval(p.inject_time), p.path[0])].append(p)
    for g in groups.values():
        g.sort(key=lambda p: (p.inject_time, p.id))
    return dict(groups)


def beta_table(packets, params: SchedulerParams, links) -> dict:
    """``(gamma, e0, e) -> beta`` for every initial link ``e0`` in ``links``.

    Initial links without packets still contribute the floor value.
    """
    counts = defaultdict(int)
    gammas = set()
    for p in _routed(packets, params):
        gamma = params.interval(p.inject_time)
        gammas.add(gamma)
        for e in set(p.path):
            counts[(gamma, p.path[0], e)] += 1
    floor = params.epsilon / (3 * params.m)
    out = {}
    for gamma in gammas:
        for e0 in links:
            for e in links:
                out[(gamma, e0, e)] = params.beta_scale * max(counts.get((gamma, e0, e), 0) / params.M, floor)
    return out


def beta_sums(packets, params: SchedulerParams, links) -> dict:
    """``(gamma, e) -> sum over e0 of beta``."""
    sums = defaultdict(float)
    for (gamma, _e0, e), b in beta_table(packets, params, links).items():
        sums[(gamma, e)] += b
    return dict(sums)


def beta_condition(packets, params: SchedulerParams, links, slack: float = BETA_SLACK) -> bool:
    limit = 1 - params.epsilon / 2 + slack
    return all(s <= limit for s in beta_sums(packets, params, links).values())


class _GroupEstimator:
    """Log-space state of ``h`` for one (interval, initial link) group.

    ``B[e, t]`` is the log of the numerator product for window ``[t, t+T)``,
    with ``t`` relative to ``gamma M``. Undecided packets with link ``e`` at
    path index ``k`` all contribute ``(eps/2) Q_k(t)``, where ``Q_k`` is the
    probability that ``tau_k`` falls in the window.
    """

    def __init__(self, group: list, params: SchedulerParams, betas: dict, gamma: int):
        self.params = params
        eps, T, M = params.epsilon, params.T, params.M
        self.half = eps / 2
        self.log_step = math.log1p(eps / 2)
        self.L = M - T  # window starts gamma M .. (gamma+1)M - T - 1
        self.lo = T
        self.hi = M - params.d_max * T
        links = sorted({e for p in group for e in p.path})
        self.row = {e: i for i, e in enumerate(links)}
        e0 = group[0].path[0]
        self.log_den = np.array([(1 + eps / 2) * betas[(gamma, e0, e)] * T * self.log_step for e in links])
        t = np.arange(self.L)
        choices = self.hi - self.lo
        self.Q = []
        for k in range(params.d_max):
            # tau_0 in [t - kT, t - kT + T) intersected with [lo, hi)
            a = np.maximum(t - k * T, self.lo)
            b = np.minimum(t - k * T + T, self.hi)
            self.Q.append(np.clip(b - a, 0, None) / choices)
        self.B = np.zeros((len(links), self.L))
        for p in group:
            for k, e in enumerate(p.path):
                self.B[self.row[e]] += self.half * self.Q[k]

    def log_h(self) -> float:
        A = self.B - self.log_den[:, None]
        shift = A.max()
        return float(shift + math.log(np.exp(A - shift).sum()))

    def decide(self, packet: Packet) -> int:
        """Pick ``tau_0 - gamma M`` for ``packet``; smallest minimiser wins ties."""
        T = self.params.T
        for k, e in enumerate(packet.path):
            self.B[self.row[e]] -= self.half * self.Q[k]
        A = self.B - self.log_den[:, None]
        shift = A.max()
        deltas = np.arange(self.lo, self.hi)
        extra = np.zeros(len(deltas))
        for k, e in enumerate(packet.path):
            prefix = np.concatenate(([0.0], np.cumsum(np.exp(A[self.row[e]] - shift))))
            # window t in [delta + kT - T + 1, delta + kT]
            extra += prefix[deltas + k * T + 1] - prefix[deltas + k * T - T + 1]
        best = extra.min()
        idx = int(np.flatnonzero(extra <= best + 1e-12 * abs(best))[0])
        delta = int(deltas[idx])
        for k, e in enumerate(packet.path):
            start = delta + k * T - T + 1
            self.B[self.row[e], start:delta + k * T + 1] += self.log_step
        return delta


def assign_deadlines_derandomized(packets, params: SchedulerParams, links=None) -> DeadlineAssignment:
    """Greedy conditional-expectation choice of ``tau_0`` per initial-link group.

    ``links`` is the set of initial links summed over in the beta bound
    (defaults to ``range(params.m)``). Paths must not repeat a link.
    """
    links = range(params.m) if links is None else links
    routed = _routed(packets, params)
    for p in routed:
        if len(set(p.path)) != len(p.path):
            raise ValueError(f"packet {p.id} repeats a link")
    betas = beta_table(routed, params, links)
    out = DeadlineAssignment(params.T)
    for (gamma, e0), group in sorted(group_packets(routed, params).items()):
        est = _GroupEstimator(group, params, betas, gamma)
        traj = [est.log_h()]
        base = gamma * params.M
        for p in group:
            out.tau0[p.id] = base + est.decide(p)
            traj.append(est.log_h())
        out.log_h[(gamma, e0)] = traj
    return out


def initial_log_h(packets, params: SchedulerParams, links=None) -> dict:
    """``log h`` before any decision, per (interval, initial link) group."""
    links = range(params.m) if links is None else links
    routed = _routed(packets, params)
    betas = beta_table(routed, params, links)
    return {key: _GroupEstimator(group, params, betas, key[0]).log_h()
            for key, group in sorted(group_packets(routed, params).items())}


# -- checks ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionReport:
    ok: bool
    worst_link: Optional[int]
    worst_start: Optional[int]
    worst_count: int
    T: int

    def to_json(self) -> dict:
        return {"ok": self.ok, "worst_link": self.worst_link, "worst_start": self.worst_start,
                "worst_count": self.worst_count, "T": self.T}


def _max_window(times: list, T: int) -> tuple:
    """Largest number of sorted ``times`` in some ``[t, t+T)``, with that ``t``."""
    best, best_t, j = 0, None, 0
    for i, t in enumerate(times):
        while j < len(times) and times[j] < t + T:
            j += 1
        if j - i > best:
            best, best_t = j - i, t
    return best, best_t


def verify_deadline_condition(packets, assignment: DeadlineAssignment, T: Optional[int] = None) -> ConditionReport:
    """At most ``T`` deadlines per link in every window of length ``T``."""
    T = assignment.T if T is None else T
    per_link = defaultdict(list)
    for p in packets:
        if not p.path:
            continue
        for e, d in zip(p.path, assignment.deadlines(p)):
            per_link[e].append(d)
    worst = (0, None, None)
    for e in sorted(per_link):
        count, start = _max_window(sorted(per_link[e]), T)
        if count > worst[0]:
            worst = (count, e, start)
    count, e, start = worst
    return ConditionReport(count <= T, e, start, count, T)


def group_bound_violations(packets, assignment: DeadlineAssignment, params: SchedulerParams, links=None) -> list:
    """``(gamma, e0, e, t, count, bound)`` where a group's window count exceeds ``(1 + eps/2) beta T``."""
    links = range(params.m) if links is None else links
    routed = _routed(packets, params)
    betas = beta_table(routed, params, links)
    bad = []
    for (gamma, e0), group in group_packets(routed, params).items():
        per_link = defaultdict(list)
        for p in group:
            for e, d in zip(p.path, assignment.deadlines(p)):
                per_link[e].append(d)
        for e, times in per_link.items():
            times.sort()
            bound = (1 + params.epsilon / 2) * betas[(gamma, e0, e)] * params.T
            count, start = _max_window(times, params.T)
            if count > bound:
                bad.append((gamma, e0, e, start, count, bound))
    return bad


def edf_step(queues: dict, step: int = 0) -> dict:
    """Packet served by each link: smallest deadline, then inject time, then id.

    ``queues`` maps a link to a list of ``QueueEntry`` carrying the deadline
    for that link.
    """
    return {e: min(q, key=lambda entry: priority_key(Rule.EDF, entry)) for e, q in queues.items() if q}


__all__ = [
    "SchedulerParams", "DeadlineAssignment", "ConditionReport", "QueueEntry",
    "compute_params", "toy_params", "t_for", "m_for",
    "assign_deadlines_random", "assign_deadlines_derandomized",
    "initial_log_h", "group_packets", "beta_table", "beta_sums", "beta_condition",
    "verify_deadline_condition", "group_bound_violations", "edf_step",
]
