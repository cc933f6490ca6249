"""Discrete-event harness: scenarios, traces, message bus, runs and reports."""

from .engine import Event, EventKind, EventQueue
from .messages import BodyKind, InterfaceMessage, MessageBus, TunnelTable, XcastTunnel, deliver
from .metrics import MetricsStore
from .report import emit_report, latency_report, load_report
from .scenario import Scenario, load_scenario, parse_scenario
from .simulation import RunResult, Simulation, run_scenario
from .traces import MobilityTrace, Waypoint, load_mobility_trace, write_mobility_trace

__all__ = [
    "BodyKind", "Event", "EventKind", "EventQueue", "InterfaceMessage", "MessageBus", "MetricsStore",
    "MobilityTrace", "RunResult", "Scenario", "Simulation", "Waypoint", "deliver", "emit_report",
    "latency_report", "load_mobility_trace", "load_report", "load_scenario", "parse_scenario",
    "run_scenario", "TunnelTable", "write_mobility_trace", "XcastTunnel",
]
