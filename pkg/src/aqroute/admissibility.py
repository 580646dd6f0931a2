"""Strong and weak (w, r)-admissibility of path-annotated traces."""

from __future__ import annotations

import math
from bisect import bisect_left
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional

from .network import InjectionTrace

# absorbs representation error in w*r, e.g. 20 * (1 - 0.8) = 3.9999999999999996
TOL = 1e-9


@dataclass(frozen=True)
class AdmissibilityReport:
    admissible: bool
    worst_link: Optional[int]
    worst_window: Optional[tuple]  # (start step, length)
    worst_load: int
    bound: float

    @property
    def excess(self) -> float:
        return self.worst_load - self.bound

    def to_json(self) -> dict:
        return {
            "admissible": self.admissible,
            "worst_link": self.worst_link,
            "worst_window": list(self.worst_window) if self.worst_window else None,
            "worst_load": self.worst_load,
            "bound": self.bound,
        }


def _times_per_link(trace: InjectionTrace) -> dict:
    per_link = defaultdict(list)
    for idx, ev in enumerate(trace.events):
        if ev.path is None:
            raise ValueError(f"event {idx} has no path")
        for e in ev.path:
            per_link[e].append(ev.t)
    return per_link


def _empty_report(bound: float) -> AdmissibilityReport:
    return AdmissibilityReport(True, None, None, 0, bound)


def check_strong(trace: InjectionTrace, w: int, r: float) -> AdmissibilityReport:
    """Check every interval ``[s, s+T)`` with ``T >= w`` on every link.

    The report names the window with the largest ``load - T*r``. Only windows
    starting and ending on injections (or of length exactly ``w``) can
    maximise that excess, so the scan is linear per link after sorting.
    """
    if w < 1:
        raise ValueError("w must be >= 1")
    per_link = _times_per_link(trace)
    best = None  # (excess, link, start, length, load)
    for e in sorted(per_link):
        times = sorted(per_link[e])
        k = len(times)
        # Windows of length exactly w starting at each injection.
        for i in range(k):
            j = bisect_left(times, times[i] + w)
            cand = (j - i - w * r, e, times[i], w, j - i)
            if best is None or cand[0] > best[0]:
                best = cand
        # Longer windows spanning injections i..j: excess = a_j - b_i + 1 - r.
        lo = 0
        min_b, min_i = math.inf, -1
        for j in range(k):
            while lo < k and times[lo] <= times[j] - w:
                b = lo - r * times[lo]
                if b < min_b:
                    min_b, min_i = b, lo
                lo += 1
            if min_i < 0:
                continue
            length = times[j] - times[min_i] + 1
            load = j - min_i + 1
            cand = (load - r * length, e, times[min_i], length, load)
            if cand[0] > best[0]:
                best = cand
    if best is None:
        return _empty_report(w * r)
    _, e, start, length, load = best
    bound = length * r
    return AdmissibilityReport(load <= bound + TOL, e, (start, length), load, bound)


def check_weak(trace: InjectionTrace, w: int, r: float) -> AdmissibilityReport:
    """Check per-link loads on the fixed partition ``[kw, (k+1)w)``."""
    if w < 1:
        raise ValueError("w must be >= 1")
    per_link = _times_per_link(trace)
    bound = w * r
    best = None
    for e in sorted(per_link):
        counts = defaultdict(int)
        for t in per_link[e]:
            counts[t // w] += 1
        for k in sorted(counts):
            if best is None or counts[k] > best[0]:
                best = (counts[k], e, k * w)
    if best is None:
        return _empty_report(bound)
    load, e, start = best
    return AdmissibilityReport(load <= bound + TOL, e, (start, w), load, bound)


def burst(trace: InjectionTrace, r: float) -> float:
    """Largest ``load - T*r`` over all links and intervals of any length."""
    rep = check_strong(trace, 1, r)
    return rep.excess if rep.worst_link is not None else 0.0


def weak_to_strong_params(w: int, r: float) -> tuple:
    """Parameters under which a weakly (w, r)-admissible trace is admissible."""
    if not 0 < r < 1:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    # round() strips representation noise such as 40.00000000000001
    w_strong = math.ceil(round(4 * w * r / (1 - r), 9))
    return max(w_strong, 1), (1 + r) / 2
