"""Scenario files: TOML documents describing one reproducible run.

Top-level tables (all optional except ``topology``)::

    [scenario]       name, duration_us, seed
    [policies]       timers, processing budgets, latency targets, SFN tolerance
    [topology]       cells / dus / cus / links / numerologies arrays
    [[rbma]]         id, mode, cells, slots, prb_start, prb_end, constituents, master_cu, slice_tag
    [[services]]     id, rbma, mcs, prbs, data_rate_kbps, priority, slots
    [[sync]]         service, period_ms, sequence, chunks_per_period, chunk_octets, start_us, stop_us
    [xrb]            XRB switching configuration
    [[ues]]          id, cell, capability, state, interested
    [[traffic]]      ue, at_us, count, interval_us        (unicast downlink data)
    [[multicast]]    at_us, count, interval_us, duplicate_for
    [[measurements]] ue, cell, at_us, ss_rsrp_dbm, csi_rsrp_dbm
    [faults]         pdu_loss, clock_skew, latency_spike arrays
    [mobility]       trace (CSV path, relative to the scenario file)
    [reuse3]         rbmas, radius_km

Inputs timed after ``duration_us`` are ignored; messages and timers already
in flight at that point still run to completion.

Unknown keys are rejected so that a typo never silently changes a run.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..bearer_switching import MeasurementReport, XrbConfig, _xrb_config_from
from ..errors import InputError, SchemaError
from ..rbma import RbmaMode, RbmaSpec, ResourceWindow, ServiceConfig
from ..rrc_mobility import Capability, InactivityPolicy, ProcessingBudget, RrcState
from ..topology import InterfaceKind

_SECTIONS = {
    "scenario", "policies", "topology", "rbma", "services", "sync", "xrb", "ues",
    "traffic", "multicast", "measurements", "faults", "mobility", "reuse3",
}


def _check_keys(entry: Mapping[str, Any], allowed: set[str], where: str, required: tuple[str, ...] = ()) -> None:
    if not isinstance(entry, Mapping):
        raise SchemaError(f"{where}: expected a table")
    unknown = sorted(set(entry) - allowed)
    if unknown:
        raise SchemaError(f"{where}: unknown keys {unknown}")
    missing = [k for k in required if k not in entry]
    if missing:
        raise SchemaError(f"{where}: missing required keys {missing}")


def _int(entry: Mapping[str, Any], key: str, where: str, default: Any = None) -> Any:
    v = entry.get(key, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"{where}: {key} must be an integer, got {v!r}")
    return v


def _list(entry: Mapping[str, Any], key: str, where: str) -> list:
    v = entry.get(key, [])
    if not isinstance(v, list):
        raise SchemaError(f"{where}: {key} must be an array")
    return v


@dataclass(frozen=True)
class Policies:
    inactivity: InactivityPolicy = InactivityPolicy()
    budget: ProcessingBudget = ProcessingBudget()
    cp_target_us: int | None = None
    up_target_us: int | None = None
    alignment_tolerance_us: int = 0
    keep_connected: bool = True
    unicast_demand_prbs: int = 0


@dataclass(frozen=True)
class SyncStream:
    service: str
    period_ms: int = 10
    sequence: int = 1
    chunks_per_period: int = 2
    chunk_octets: int = 100
    start_us: int = 0
    stop_us: int | None = None


@dataclass(frozen=True)
class UeSpec:
    ue_id: int
    cell: int
    capability: Capability = Capability.NORMAL
    state: RrcState = RrcState.IDLE
    interested: bool = False


@dataclass(frozen=True)
class UnicastTraffic:
    ue: int
    at_us: int
    count: int = 1
    interval_us: int = 0


@dataclass(frozen=True)
class MulticastBurst:
    at_us: int
    count: int = 1
    interval_us: int = 0
    duplicate_for: tuple[int, ...] = ()


@dataclass(frozen=True)
class PduLoss:
    du: int
    packet: int
    sequence: int | None = None


@dataclass(frozen=True)
class LatencySpikeSpec:
    a: str
    b: str
    kind: InterfaceKind
    from_us: int
    to_us: int
    extra_us: int


@dataclass(frozen=True)
class Faults:
    pdu_loss: tuple[PduLoss, ...] = ()
    clock_skew: Mapping[int, int] = field(default_factory=dict)
    latency_spikes: tuple[LatencySpikeSpec, ...] = ()


@dataclass(frozen=True)
class Reuse3Spec:
    rbmas: tuple[int, ...]
    radius_km: float


@dataclass(frozen=True)
class Scenario:
    name: str
    topology: Mapping[str, Any]
    duration_us: int = 1_000_000
    seed: int = 0
    policies: Policies = Policies()
    rbmas: tuple[RbmaSpec, ...] = ()
    services: tuple[ServiceConfig, ...] = ()
    syncs: tuple[SyncStream, ...] = ()
    xrb: XrbConfig | None = None
    ues: tuple[UeSpec, ...] = ()
    traffic: tuple[UnicastTraffic, ...] = ()
    multicast: tuple[MulticastBurst, ...] = ()
    measurements: tuple[MeasurementReport, ...] = ()
    faults: Faults = Faults()
    mobility_trace: Path | None = None
    reuse3: Reuse3Spec | None = None
    source: Path | None = None


def _rbma(entry: Mapping[str, Any], i: int) -> RbmaSpec:
    where = f"rbma[{i}]"
    _check_keys(entry, {"id", "mode", "cells", "slots", "prb_start", "prb_end", "constituents",
                        "master_cu", "slice_tag"}, where, ("id", "mode"))
    try:
        mode = RbmaMode(entry["mode"])
    except ValueError:
        raise SchemaError(f"{where}: unknown mode {entry['mode']!r}") from None
    window = None
    if "prb_start" in entry or "prb_end" in entry or "slots" in entry:
        _check_keys(entry, set(entry), where, ("slots", "prb_start", "prb_end"))
        window = ResourceWindow(
            frozenset(int(s) for s in _list(entry, "slots", where)),
            _int(entry, "prb_start", where), _int(entry, "prb_end", where),
        )
    return RbmaSpec(
        rbma_id=_int(entry, "id", where),
        mode=mode,
        cells=tuple(int(c) for c in _list(entry, "cells", where)),
        windows=window,
        constituents=tuple(int(c) for c in _list(entry, "constituents", where)),
        slice_tag=entry.get("slice_tag"),
        master_cu=_int(entry, "master_cu", where),
    )


def _service(entry: Mapping[str, Any], i: int) -> ServiceConfig:
    where = f"services[{i}]"
    _check_keys(entry, {"id", "rbma", "mcs", "prbs", "data_rate_kbps", "priority", "slots"},
                where, ("id", "rbma", "mcs", "prbs"))
    slots = entry.get("slots")
    return ServiceConfig(
        service_id=str(entry["id"]),
        rbma_id=_int(entry, "rbma", where),
        mcs_index=_int(entry, "mcs", where),
        required_prbs=_int(entry, "prbs", where),
        data_rate_kbps=float(entry.get("data_rate_kbps", 0.0)),
        priority=_int(entry, "priority", where, 0),
        slot_pattern=frozenset(int(s) for s in slots) if slots is not None else None,
    )


def parse_scenario(doc: Mapping[str, Any], source: Path | None = None) -> Scenario:
    """Validate a parsed TOML document and build a :class:`Scenario`."""
    try:
        return _parse(doc, source)
    except (ValueError, TypeError, KeyError) as exc:
        raise SchemaError(f"malformed scenario: {exc}") from None


def _parse(doc: Mapping[str, Any], source: Path | None) -> Scenario:
    unknown = sorted(set(doc) - _SECTIONS)
    if unknown:
        raise SchemaError(f"unknown sections {unknown}")
    if "topology" not in doc:
        raise SchemaError("missing [topology] section")
    base = source.parent if source is not None else Path(".")

    head = doc.get("scenario", {})
    _check_keys(head, {"name", "duration_us", "seed"}, "scenario")
    duration = _int(head, "duration_us", "scenario", 1_000_000)
    if duration < 0:
        raise SchemaError("scenario: duration_us must be >= 0")

    pol = doc.get("policies", {})
    _check_keys(pol, {"inactivity_timeout_us", "idle_release_timeout_us", "reselection_hysteresis_db",
                      "rrc_processing_us", "core_processing_us", "cp_target_us", "up_target_us",
                      "alignment_tolerance_us", "keep_connected", "unicast_demand_prbs"}, "policies")
    try:
        policies = Policies(
            inactivity=InactivityPolicy(
                _int(pol, "inactivity_timeout_us", "policies", 10_000_000),
                _int(pol, "idle_release_timeout_us", "policies", 60_000_000),
                float(pol.get("reselection_hysteresis_db", 3.0)),
            ),
            budget=ProcessingBudget(
                _int(pol, "rrc_processing_us", "policies", 0),
                _int(pol, "core_processing_us", "policies", 1),
            ),
            cp_target_us=_int(pol, "cp_target_us", "policies"),
            up_target_us=_int(pol, "up_target_us", "policies"),
            alignment_tolerance_us=_int(pol, "alignment_tolerance_us", "policies", 0),
            keep_connected=bool(pol.get("keep_connected", True)),
            unicast_demand_prbs=_int(pol, "unicast_demand_prbs", "policies", 0),
        )
    except InputError as exc:
        raise SchemaError(f"policies: {exc}") from None

    topo = doc["topology"]
    _check_keys(topo, {"cells", "dus", "cus", "links", "numerologies"}, "topology")

    rbmas = tuple(_rbma(e, i) for i, e in enumerate(_list(doc, "rbma", "root")))
    services = tuple(_service(e, i) for i, e in enumerate(_list(doc, "services", "root")))
    service_ids = {s.service_id for s in services}

    syncs = []
    for i, e in enumerate(_list(doc, "sync", "root")):
        where = f"sync[{i}]"
        _check_keys(e, {"service", "period_ms", "sequence", "chunks_per_period", "chunk_octets",
                        "start_us", "stop_us"}, where, ("service",))
        if e["service"] not in service_ids:
            raise SchemaError(f"{where}: unknown service {e['service']!r}")
        s = SyncStream(
            str(e["service"]), _int(e, "period_ms", where, 10), _int(e, "sequence", where, 1),
            _int(e, "chunks_per_period", where, 2), _int(e, "chunk_octets", where, 100),
            _int(e, "start_us", where, 0), _int(e, "stop_us", where),
        )
        if s.chunks_per_period < 1 or s.chunk_octets < 1 or s.period_ms < 1:
            raise SchemaError(f"{where}: period, chunk count and chunk size must be positive")
        syncs.append(s)

    xrb = None
    if "xrb" in doc:
        raw = dict(doc["xrb"])
        raw.setdefault("xrb_id", raw.pop("id", 1))
        try:
            xrb = _xrb_config_from(raw)
        except InputError as exc:
            raise SchemaError(f"xrb: {exc}") from None

    ues = []
    for i, e in enumerate(_list(doc, "ues", "root")):
        where = f"ues[{i}]"
        _check_keys(e, {"id", "cell", "capability", "state", "interested"}, where, ("id", "cell"))
        try:
            ue = UeSpec(_int(e, "id", where), _int(e, "cell", where), Capability(e.get("capability", "Normal")),
                        RrcState(e.get("state", "Idle")), bool(e.get("interested", False)))
        except ValueError as exc:
            raise SchemaError(f"{where}: {exc}") from None
        if ue.capability is Capability.RECEIVE_ONLY and ue.state is not RrcState.IDLE:
            raise SchemaError(f"{where}: receive-only UEs have no RRC connection")
        ues.append(ue)
    ue_ids = [u.ue_id for u in ues]
    if len(set(ue_ids)) != len(ue_ids):
        raise SchemaError("ues: duplicate UE id")
    rom = {u.ue_id for u in ues if u.capability is Capability.RECEIVE_ONLY}

    def _ue_ref(ue: int, where: str) -> int:
        if ue not in ue_ids:
            raise SchemaError(f"{where}: unknown UE {ue}")
        if ue in rom:
            raise SchemaError(f"{where}: UE {ue} is receive-only and cannot be addressed")
        return ue

    traffic = []
    for i, e in enumerate(_list(doc, "traffic", "root")):
        where = f"traffic[{i}]"
        _check_keys(e, {"ue", "at_us", "count", "interval_us"}, where, ("ue", "at_us"))
        traffic.append(UnicastTraffic(_ue_ref(_int(e, "ue", where), where), _int(e, "at_us", where),
                                      _int(e, "count", where, 1), _int(e, "interval_us", where, 0)))

    multicast = []
    for i, e in enumerate(_list(doc, "multicast", "root")):
        where = f"multicast[{i}]"
        _check_keys(e, {"at_us", "count", "interval_us", "duplicate_for"}, where, ("at_us",))
        if xrb is None:
            raise SchemaError(f"{where}: multicast traffic needs an [xrb] section")
        dup = tuple(_ue_ref(int(u), where) for u in _list(e, "duplicate_for", where))
        multicast.append(MulticastBurst(_int(e, "at_us", where), _int(e, "count", where, 1),
                                        _int(e, "interval_us", where, 0), dup))

    measurements = []
    for i, e in enumerate(_list(doc, "measurements", "root")):
        where = f"measurements[{i}]"
        _check_keys(e, {"ue", "cell", "at_us", "ss_rsrp_dbm", "csi_rsrp_dbm", "ss_rsrq_db", "csi_rsrq_db"},
                    where, ("ue", "cell", "at_us", "ss_rsrp_dbm"))
        measurements.append(MeasurementReport(
            _ue_ref(_int(e, "ue", where), where), _int(e, "cell", where), float(e["ss_rsrp_dbm"]),
            _int(e, "at_us", where), e.get("csi_rsrp_dbm"), e.get("ss_rsrq_db"), e.get("csi_rsrq_db"),
        ).validate())

    f = doc.get("faults", {})
    _check_keys(f, {"pdu_loss", "clock_skew", "latency_spike"}, "faults")
    losses = []
    for i, e in enumerate(_list(f, "pdu_loss", "faults")):
        _check_keys(e, {"du", "packet", "sequence"}, f"faults.pdu_loss[{i}]", ("du", "packet"))
        losses.append(PduLoss(int(e["du"]), int(e["packet"]), e.get("sequence")))
    skew: dict[int, int] = {}
    for i, e in enumerate(_list(f, "clock_skew", "faults")):
        _check_keys(e, {"du", "offset_us"}, f"faults.clock_skew[{i}]", ("du", "offset_us"))
        skew[int(e["du"])] = skew.get(int(e["du"]), 0) + int(e["offset_us"])
    spikes = []
    for i, e in enumerate(_list(f, "latency_spike", "faults")):
        where = f"faults.latency_spike[{i}]"
        _check_keys(e, {"a", "b", "kind", "from_us", "to_us", "extra_us"}, where,
                    ("a", "b", "kind", "from_us", "to_us", "extra_us"))
        spikes.append(LatencySpikeSpec(str(e["a"]), str(e["b"]), InterfaceKind(e["kind"]),
                                       int(e["from_us"]), int(e["to_us"]), int(e["extra_us"])))

    trace = None
    if "mobility" in doc:
        _check_keys(doc["mobility"], {"trace"}, "mobility", ("trace",))
        trace = (base / doc["mobility"]["trace"]).resolve()

    reuse3 = None
    if "reuse3" in doc:
        r = doc["reuse3"]
        _check_keys(r, {"rbmas", "radius_km"}, "reuse3", ("rbmas", "radius_km"))
        reuse3 = Reuse3Spec(tuple(int(x) for x in r["rbmas"]), float(r["radius_km"]))

    return Scenario(
        name=str(head.get("name", source.stem if source else "scenario")),
        topology=topo,
        duration_us=duration,
        seed=_int(head, "seed", "scenario", 0),
        policies=policies,
        rbmas=rbmas,
        services=services,
        syncs=tuple(syncs),
        xrb=xrb,
        ues=tuple(ues),
        traffic=tuple(traffic),
        multicast=tuple(multicast),
        measurements=tuple(measurements),
        faults=Faults(tuple(losses), skew, tuple(spikes)),
        mobility_trace=trace,
        reuse3=reuse3,
        source=source,
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except OSError as exc:
        raise SchemaError(f"cannot read scenario {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    return parse_scenario(doc, path)
