"""Shared builders and brute-force oracles for the test suite."""

from __future__ import annotations

import itertools
import math

import numpy as np

from aqroute.network import Injection, InjectionTrace, Network, build_network


def random_network(rng, n: int, m: int) -> Network:
    """Strongly connected multigraph: a directed cycle plus random extra links."""
    if n == 1:
        return build_network([], 1)
    links = [(i, (i + 1) % n) for i in range(n)]
    while len(links) < m:
        a, b = (int(x) for x in rng.integers(n, size=2))
        if a != b:
            links.append((a, b))
    return build_network([(a, b, f"l{i}") for i, (a, b) in enumerate(links)], n)


def brute_window_max(trace: InjectionTrace, m: int, w: int, r: float, strong: bool) -> tuple:
    """Worst (load - bound) over every checked window and link, by direct counting."""
    if not len(trace):
        return 0, 0.0, True
    horizon = trace.horizon
    worst_excess, worst_load, ok = -math.inf, 0, True
    if strong:
        # windows may run past the last injection; beyond that only the bound grows
        windows = [(s, T) for s in range(horizon) for T in range(w, max(w, horizon - s) + 1)]
    else:
        windows = [(s, w) for s in range(0, horizon, w)]
    for s, T in windows:
        counts = np.zeros(m, dtype=int)
        for ev in trace:
            if s <= ev.t < s + T:
                for e in ev.path:
                    counts[e] += 1
        load = int(counts.max())
        if load > T * r + 1e-9:
            ok = False
        if load - T * r > worst_excess:
            worst_excess, worst_load = load - T * r, load
    return worst_load, worst_excess, ok


def single_link_trace(times) -> InjectionTrace:
    return InjectionTrace([Injection(t, 0, 1, (0,)) for t in sorted(times)])


def all_path_weights(net: Network, src: int, dst: int, weights) -> list:
    """Weights of every simple path, by exhaustive DFS over links."""
    out = []

    def dfs(v, seen, total, seq):
        if v == dst:
            out.append((total, len(seq), seq))
            return
        for e in net.out_links[v]:
            u = net.head(e)
            if u not in seen:
                dfs(u, seen | {u}, total + weights[e], seq + (e,))

    dfs(src, {src}, 0.0, ())
    return out


def pairs(n: int):
    return [(s, d) for s, d in itertools.product(range(n), repeat=2) if s != d]


EPS_TOY = 0.9
D_MAX_TOY = 3


def toy_instance(seed: int):
    """Random network, one M-interval of injections and toy deadline parameters with h(empty) < 1.

    ``T`` doubles from 32 until the estimator starts below one for every
    initial-link group; ``M`` is the smallest value allowed for that ``T``.
    """
    from aqroute.adversaries import gen_random_admissible
    from aqroute.deadlines import initial_log_h, m_for, toy_params

    rng = np.random.default_rng(4000 + seed)
    n = int(rng.integers(2, 5))
    m = int(rng.integers(max(n, 2), 7))
    net = random_network(rng, n, m)
    T = 32
    while True:
        M = m_for(EPS_TOY, 1, D_MAX_TOY, T)
        params = toy_params(EPS_TOY, net.m, max(M // 4, 1), D_MAX_TOY, T, M)
        trace = gen_random_admissible(net, M // 4, 1 - EPS_TOY, M, seed, bundles=1)
        packets = [p for p in trace.packets() if len(p.path) <= D_MAX_TOY]
        for i, p in enumerate(packets):
            p.id = i
        start = initial_log_h(packets, params, range(net.m))
        if not start or max(start.values()) < 0:
            return net, params, packets
        T *= 2
