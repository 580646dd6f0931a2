"""Greedy per-link queueing disciplines.

Every rule maps a queued packet to a sort key; the link serves the packet
with the smallest key. Keys end with the packet id so the order is total.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class Rule(str, enum.Enum):
    FIFO = "fifo"
    LIFO = "lifo"
    NTG = "ntg"
    FTG = "ftg"
    LIS = "lis"
    SIS = "sis"
    EDF = "edf"


GREEDY_RULES = (Rule.FIFO, Rule.LIFO, Rule.NTG, Rule.FTG, Rule.LIS, Rule.SIS)


@dataclass(frozen=True)
class QueueEntry:
    """A packet waiting at a link.

    ``remaining`` counts the links still to cross, the current one included.
    ``deadline`` is the packet's deadline for this link (EDF only).
    """

    packet_id: int
    inject_time: int
    arrival: int
    remaining: int
    deadline: int = 0


def priority_key(rule: Rule, entry: QueueEntry) -> tuple:
    if rule is Rule.FIFO:
        return (entry.arrival, entry.packet_id)
    if rule is Rule.LIFO:
        return (-entry.arrival, entry.packet_id)
    if rule is Rule.NTG:
        return (entry.remaining, entry.packet_id)
    if rule is Rule.FTG:
        return (-entry.remaining, entry.packet_id)
    if rule is Rule.LIS:
        return (entry.inject_time, entry.packet_id)
    if rule is Rule.SIS:
        return (-entry.inject_time, entry.packet_id)
    if rule is Rule.EDF:
        return (entry.deadline, entry.inject_time, entry.packet_id)
    raise ValueError(f"unknown rule {rule!r}")


def select(rule, queue, step: int = 0) -> QueueEntry:
    """Entry the link transmits at ``step``. ``queue`` must be non-empty."""
    rule = Rule(rule)
    if not queue:
        raise ValueError("cannot select from an empty queue")
    return min(queue, key=lambda entry: priority_key(rule, entry))
