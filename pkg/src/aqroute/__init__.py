"""Adversarial queueing simulator with online source routing and deadline scheduling."""

from .admissibility import AdmissibilityReport, burst, check_strong, check_weak, weak_to_strong_params
from .engine import InstabilityCap, SimReport, Simulation, SimulationError
from .network import Injection, InjectionTrace, Link, Network, Packet, build_network, load_network, load_trace
from .routing import RoutingParams, SourceRouter, Variant
from .schedulers import Rule

__all__ = [
    "AdmissibilityReport", "burst", "check_strong", "check_weak", "weak_to_strong_params",
    "InstabilityCap", "SimReport", "Simulation", "SimulationError",
    "Injection", "InjectionTrace", "Link", "Network", "Packet", "build_network", "load_network", "load_trace",
    "RoutingParams", "SourceRouter", "Variant", "Rule",
]
__version__ = "0.1.0"
