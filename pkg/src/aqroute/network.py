"""Topology, packets, injection traces and shortest paths.

Paths are plain tuples of link ids. A network is immutable once built.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

Path = tuple  # tuple[int, ...] of link ids


@dataclass(frozen=True)
class Link:
    id: int
    tail: int
    head: int
    label: str = ""


class Network:
    """Directed multigraph with dense node ids ``0..n-1`` and link ids ``0..m-1``."""

    def __init__(self, n: int, links: Sequence[Link]):
        self.n = n
        self.links = tuple(links)
        self.m = len(self.links)
        out: list[list[int]] = [[] for _ in range(n)]
        for link in self.links:
            out[link.tail].append(link.id)
        self.out_links = tuple(tuple(ls) for ls in out)
        self._by_label = {link.label: link.id for link in self.links if link.label}

    @property
    def nodes(self) -> range:
        return range(self.n)

    def tail(self, e: int) -> int:
        return self.links[e].tail

    def head(self, e: int) -> int:
        return self.links[e].head

    def link_by_label(self, label: str) -> int:
        return self._by_label[label]

    def __repr__(self) -> str:
        return f"Network(n={self.n}, m={self.m})"

    def to_json(self) -> dict:
        return {"nodes": self.n, "links": [[l.tail, l.head, l.label] for l in self.links]}


def build_network(spec: Iterable[Sequence], n: Optional[int] = None) -> Network:
    """Build a network from ``(tail, head[, label])`` triples.

    Link ids follow the order of ``spec``. Without ``n`` the referenced node
    ids must be exactly ``0..k-1``; with ``n`` they must lie in ``0..n-1``.
    """
    triples = [tuple(item) for item in spec]
    referenced: set[int] = set()
    links = []
    for idx, item in enumerate(triples):
        if len(item) not in (2, 3):
            raise ValueError(f"link {idx}: expected (tail, head[, label]), got {item!r}")
        tail, head = int(item[0]), int(item[1])
        label = str(item[2]) if len(item) == 3 else ""
        if tail < 0 or head < 0:
            raise ValueError(f"link {idx}: negative node id")
        referenced.update((tail, head))
        links.append(Link(idx, tail, head, label))
    if n is None:
        n = max(referenced) + 1 if referenced else 0
        missing = sorted(set(range(n)) - referenced)
        if missing:
            raise ValueError(f"node ids are not contiguous from 0: missing {missing}")
    else:
        bad = sorted(v for v in referenced if v >= n)
        if bad:
            raise ValueError(f"node ids {bad} out of range for n={n}")
    return Network(n, links)


def load_network(path) -> Network:
    with open(path) as fh:
        doc = json.load(fh)
    return build_network(doc["links"], n=int(doc["nodes"]))


def save_network(net: Network, path) -> None:
    with open(path, "w") as fh:
        json.dump(net.to_json(), fh)


def path_length(path: Sequence[int]) -> int:
    return len(path)


def validate_path(net: Network, path: Sequence[int], src: int, dst: int) -> None:
    """Raise ``ValueError`` unless ``path`` is a link-simple src->dst walk."""
    if not path:
        if src != dst:
            raise ValueError("empty path between distinct nodes")
        return
    if len(set(path)) != len(path):
        raise ValueError(f"path {tuple(path)} repeats a link")
    for e in path:
        if not 0 <= e < net.m:
            raise ValueError(f"unknown link {e}")
    if net.tail(path[0]) != src or net.head(path[-1]) != dst:
        raise ValueError(f"path {tuple(path)} does not join {src} to {dst}")
    for a, b in zip(path, path[1:]):
        if net.head(a) != net.tail(b):
            raise ValueError(f"links {a} and {b} are not incident")


def path_weight(path: Sequence[int], weights: Sequence[float]) -> float:
    total = 0.0
    for e in path:
        total += weights[e]
    return total


def _logaddexp(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    if b == -math.inf:
        return a
    return a + math.log1p(math.exp(b - a))


def _dijkstra(net: Network, src: int, weights, combine, zero) -> dict:
    # Labels are (cost, hops, link sequence); lexicographic order gives the
    # documented tie-break.
    best: dict[int, tuple] = {src: (zero, 0, ())}
    done: set[int] = set()
    heap = [(zero, 0, (), src)]
    while heap:
        cost, hops, seq, v = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        for e in net.out_links[v]:
            u = net.links[e].head
            if u in done:
                continue
            label = (combine(cost, weights[e]), hops + 1, seq + (e,))
            cur = best.get(u)
            if cur is None or label < cur:
                best[u] = label
                heapq.heappush(heap, (*label, u))
    return best


def shortest_paths_from(net: Network, weights, src: int, *, log_weights: bool = False) -> dict:
    """Minimum-weight paths from ``src`` to every reachable node.

    With ``log_weights`` the entries of ``weights`` are natural logs of the
    link weights and path costs are combined with log-sum-exp, which keeps
    the comparison exact over ranges that underflow a double.
    """
    if log_weights:
        labels = _dijkstra(net, src, weights, _logaddexp, -math.inf)
    else:
        for e in range(net.m):
            w = weights[e]
            if not (w >= 0.0) or math.isinf(w):
                raise ValueError(f"weight of link {e} must be finite and non-negative, got {w}")
        labels = _dijkstra(net, src, weights, lambda a, b: a + b, 0.0)
    return {v: label[2] for v, label in labels.items()}


def shortest_path(net: Network, weights, src: int, dst: int, *, log_weights: bool = False):
    """Minimum-weight ``src -> dst`` path, or ``None`` when unreachable.

    Ties are broken by fewer links, then by the lexicographically smallest
    link-id sequence. ``src == dst`` yields the empty path.
    """
    if src == dst:
        return ()
    return shortest_paths_from(net, weights, src, log_weights=log_weights).get(dst)


def all_simple_paths(net: Network, src: int, dst: int, max_links: Optional[int] = None) -> list:
    """Every node-simple ``src -> dst`` path (small networks only)."""
    if src == dst:
        return [()]
    found = []
    stack = [(src, (), {src})]
    while stack:
        v, seq, seen = stack.pop()
        if max_links is not None and len(seq) >= max_links:
            continue
        for e in net.out_links[v]:
            u = net.links[e].head
            if u == dst:
                found.append(seq + (e,))
            elif u not in seen:
                stack.append((u, seq + (e,), seen | {u}))
    found.sort(key=lambda p: (len(p), p))
    return found


def reachable(net: Network, src: int) -> set:
    seen = {src}
    frontier = [src]
    while frontier:
        v = frontier.pop()
        for e in net.out_links[v]:
            u = net.links[e].head
            if u not in seen:
                seen.add(u)
                frontier.append(u)
    return seen


@dataclass
class Packet:
    id: int
    inject_time: int
    source: int
    dest: int
    path: Optional[Path] = None
    deadlines: Optional[list] = None
    control: bool = False
    tag: str = ""


@dataclass(frozen=True)
class Injection:
    t: int
    src: int
    dst: int
    path: Optional[Path] = None


@dataclass
class InjectionTrace:
    events: list = field(default_factory=list)

    def __post_init__(self):
        self.events = [
            ev if isinstance(ev, Injection) else Injection(int(ev[0]), int(ev[1]), int(ev[2]),
                                                           tuple(ev[3]) if len(ev) > 3 and ev[3] is not None else None)
            for ev in self.events
        ]
        for i in range(1, len(self.events)):
            if self.events[i].t < self.events[i - 1].t:
                raise ValueError(f"event {i} injected before event {i - 1}")

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def __getitem__(self, idx):
        return self.events[idx]

    @property
    def horizon(self) -> int:
        return self.events[-1].t + 1 if self.events else 0

    def with_paths(self, paths: Sequence) -> "InjectionTrace":
        return InjectionTrace([Injection(ev.t, ev.src, ev.dst, tuple(p)) for ev, p in zip(self.events, paths)])

    def packets(self) -> list:
        return [Packet(i, ev.t, ev.src, ev.dst, ev.path) for i, ev in enumerate(self.events)]

    def dumps(self) -> str:
        lines = []
        for ev in self.events:
            doc = {"t": ev.t, "src": ev.src, "dst": ev.dst}
            if ev.path is not None:
                doc["path"] = list(ev.path)
            lines.append(json.dumps(doc))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def loads(cls, text: str) -> "InjectionTrace":
        events = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            doc = json.loads(line)
            try:
                path = tuple(doc["path"]) if doc.get("path") is not None else None
                events.append(Injection(int(doc["t"]), int(doc["src"]), int(doc["dst"]), path))
            except KeyError as exc:
                raise ValueError(f"trace line {lineno}: missing field {exc}") from None
        return cls(events)


def load_trace(path) -> InjectionTrace:
    with open(path) as fh:
        return InjectionTrace.loads(fh.read())


def save_trace(trace: InjectionTrace, path) -> None:
    with open(path, "w") as fh:
        fh.write(trace.dumps())
