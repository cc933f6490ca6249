"""The discrete-event run: wires every module to the event queue.

All interaction between network nodes travels as :class:`InterfaceMessage`
hops over topology links, so every latency in the run is a sum of link
delays, configured processing budgets and seeded jitter.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from ..bearer_switching import (
    Channel,
    MeasurementReport,
    PdcpDedupState,
    PdcpPdu,
    Reason,
    SwitchingDecision,
    XrbFunction,
    assignment_cost,
    decide_channels,
    route_pdu,
)
from ..errors import RuntimeInvariantViolation, SchemaError
from ..ran_sync import SyncReceiver, SyncSender, SyncSetup, negotiate_sync_params
from ..rbma import Admitted, RbmaMode, RbmaRegistry, Reuse3Plan, plan_reuse3
from ..rrc_mobility import (
    ActivityKind,
    Capability,
    CmState,
    LatencyModel,
    NoSignal,
    RrcState,
    UeContext,
    best_cell,
    cell_reselect,
    check_context,
    new_context,
    release_to_idle,
    report_activity,
    suspend_to_inactive,
)
from ..sfn_scheduler import (
    Frame,
    build_frame,
    check_grid_exclusive,
    check_sfn_alignment,
    period_hash,
    transmission_events,
)
from ..topology import InterfaceKind, Topology, load_topology
from .engine import PHASE_CHECK, PHASE_DEFAULT, PHASE_EMIT, EventKind, EventQueue
from .messages import BodyKind, Delivery, InterfaceMessage, LatencySpike, MessageBus, TunnelTable
from .metrics import MetricsStore
from .scenario import Scenario, SyncStream, load_scenario
from .traces import MobilityTrace, load_mobility_trace

G_RNTI_BASE = 0xFFF0 - 0x100

Hop = tuple[str, str, InterfaceKind, BodyKind]


@dataclass(frozen=True)
class Relay:
    """Body of every simulated message: the remaining route and what to do on arrival."""

    hops: tuple[Hop, ...]
    index: int
    tag: str
    payload: Any = None

    @property
    def final(self) -> bool:
        return self.index == len(self.hops) - 1


@dataclass
class _Stream:
    index: int
    spec: SyncStream
    service_id: str
    rbma_id: int
    setup: SyncSetup
    sender: SyncSender
    receivers: dict[int, SyncReceiver] = field(default_factory=dict)
    pending_responses: int = 0
    negotiated_at: int | None = None
    emissions: dict[int, dict[int, list]] = field(default_factory=dict)  # period -> du -> emissions
    first_hash: dict[int, str] = field(default_factory=dict)  # du -> hash of first radiated period
    min_slack: dict[int, int] = field(default_factory=dict)  # du -> smallest TTA - arrival seen
    slack_sum: dict[int, tuple[int, int]] = field(default_factory=dict)  # du -> (total slack, pdus)

    @property
    def du_ids(self) -> list[int]:
        return [int(n.split(":")[1]) for n in self.setup.dus]


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    topology: Topology
    registry: RbmaRegistry
    metrics: MetricsStore
    contexts: dict[int, UeContext]
    frames: list[Frame]
    reuse3: Reuse3Plan | None
    admission: list[dict]
    streams: list[dict]
    events: int
    messages: dict[str, Any]


class Simulation:
    def __init__(self, scenario: Scenario, seed: int | None = None) -> None:
        self.sc = scenario
        self.seed = scenario.seed if seed is None else seed
        self.t = t = load_topology(scenario.topology)
        for du in scenario.faults.clock_skew:
            if du not in t.dus:
                raise SchemaError(f"faults.clock_skew: unknown DU {du}")
        self.offsets = {
            du: d.clock_offset_us + scenario.faults.clock_skew.get(du, 0) for du, d in sorted(t.dus.items())
        }
        self.q = EventQueue()
        self.bus = MessageBus(t, self.q, self.seed)
        self.tunnels = TunnelTable()
        self.bus.spikes = [LatencySpike(s.a, s.b, s.kind, s.from_us, s.to_us, s.extra_us)
                           for s in scenario.faults.latency_spikes]
        self.m = MetricsStore()
        self.policy = scenario.policies
        self.latency = LatencyModel(t, self.policy.budget)

        self.registry = RbmaRegistry(t)
        for spec in scenario.rbmas:
            self.registry.create_rbma(spec)
        self.admission: list[dict] = []
        for s in scenario.services:
            res = self.registry.admit_service(s)
            row = {"service": s.service_id, "rbma": s.rbma_id, "admitted": res.admitted}
            if not isinstance(res, Admitted):
                row.update(cell=res.cell_id, reason=res.reason)
                self.m.incr("services_rejected")
            else:
                self.m.incr("services_admitted")
            self.admission.append(row)

        self.xrb = scenario.xrb
        self.xrb_function = XrbFunction()
        if self.xrb is not None:
            self.xrb_function.configure_xrb(self.xrb)
        self.dedup = PdcpDedupState()
        self.next_sn = 0
        self.expected_deliveries: dict[int, tuple[int, ...]] = {}
        self.deliveries: dict[tuple[int, int], int] = {}

        self.ctx: dict[int, UeContext] = {}
        self.interested: set[int] = set()
        self.reports: dict[int, MeasurementReport] = {}
        self.pending_data: dict[int, list[int]] = {}
        self.procedure: dict[int, tuple[str, int]] = {}
        self.uplink_seen: dict[int, int] = {}
        for u in scenario.ues:
            t.cell(u.cell)
            self.ctx[u.ue_id] = self._initial_context(u.ue_id, u.cell, u.capability, u.state)
            if u.interested:
                self.interested.add(u.ue_id)
            self.uplink_seen[u.ue_id] = 0

        self.trace: MobilityTrace | None = None
        if scenario.mobility_trace is not None:
            self.trace = load_mobility_trace(scenario.mobility_trace, sorted(t.cells))
            for ue in self.trace.ue_ids:
                if ue not in self.ctx:
                    raise SchemaError(f"mobility trace references unknown UE {ue}")

        self.streams: list[_Stream] = []
        self._schedule_inputs()

    # -- setup -------------------------------------------------------------

    def _initial_context(self, ue: int, cell: int, cap: Capability, state: RrcState) -> UeContext:
        ctx = new_context(ue, cell, cap)
        if state is RrcState.IDLE:
            return ctx
        cu = self.t.cu_of_cell(cell)
        ctx = replace(ctx, rrc_state=RrcState.CONNECTED, cm_state=CmState.CM_CONNECTED,
                      anchor_gnb=cu, has_ran_context=True)
        if state is RrcState.INACTIVE:
            rbma = self.registry.rbma_for_cell(cell)
            ctx = replace(ctx, rrc_state=RrcState.INACTIVE, rbma_id=rbma.rbma_id, g_rnti=self._g_rnti(rbma.rbma_id))
        check_context(ctx)
        return ctx

    def _g_rnti(self, rbma_id: int) -> int:
        return G_RNTI_BASE + (self.xrb.xrb_id if self.xrb is not None else rbma_id)

    def _schedule_inputs(self) -> None:
        sc = self.sc

        def push(at: int, kind: EventKind, payload: object) -> None:
            # stimuli past the end of the run are ignored; work already in flight still drains
            if at <= sc.duration_us:
                self.q.push(at, kind, payload)

        for i, spec in enumerate(sc.syncs):
            self._init_stream(i, spec)
        for tr in sc.traffic:
            for k in range(tr.count):
                push(tr.at_us + k * tr.interval_us, EventKind.TRAFFIC_ARRIVAL, ("unicast", tr.ue))
        for burst in sc.multicast:
            for k in range(burst.count):
                push(burst.at_us + k * burst.interval_us, EventKind.TRAFFIC_ARRIVAL, ("multicast", burst))
        for rep in sc.measurements:
            push(rep.timestamp_us, EventKind.MEASUREMENT_REPORT, rep)
        if self.trace is not None:
            for wp in self.trace.waypoints:
                push(wp.time_us, EventKind.MOBILITY_STEP, wp)

    def _init_stream(self, i: int, spec: SyncStream) -> None:
        services = self.registry.services
        if spec.service not in services:
            self.m.incr("sync_streams_skipped")
            self.m.log("notes", (f"sync stream {i}: service {spec.service} not admitted",))
            return
        svc = services[spec.service]
        rbma = self.registry.get(svc.rbma_id)
        if rbma.mode is not RbmaMode.SFN:
            raise SchemaError(f"sync stream {i}: service {spec.service} is not carried by an SFN RBMA")
        dus = sorted({du for du, _ in self.registry.resolve_rbma(rbma.rbma_id)})
        setup = negotiate_sync_params(self.t, rbma.master_cu, dus, spec.period_ms, spec.sequence, spec.start_us)
        stream = _Stream(i, spec, spec.service, rbma.rbma_id, setup, SyncSender(setup.params))
        self.streams.append(stream)
        self.q.push(spec.start_us, EventKind.SERVICE_REQUEST, ("sync_negotiate", stream))

    # -- messaging -----------------------------------------------------------

    def _send(self, hops: list[Hop] | tuple[Hop, ...], tag: str, payload: Any, now: int, index: int = 0) -> None:
        hops = tuple(hops)
        src, dst, kind, body = hops[index]
        if src.startswith("ue:"):
            ue = int(src.split(":")[1])
            if kind is InterfaceKind.Uu:
                self.uplink_seen[ue] = self.uplink_seen.get(ue, 0) + 1
                self.m.incr("uplink_messages")
        msg = InterfaceMessage(kind, src, dst, body, Relay(hops, index, tag, payload))
        self.bus.deliver(msg, now)

    def _on_delivery(self, d: Delivery, now: int) -> None:
        relay: Relay = d.message.body
        if relay.tag == "sync_pdu" and relay.final and self._injected_loss(d.message.destination, relay.payload[1]):
            self.bus.drop(d, now, "injected pdu loss")
            self.m.incr("injected_losses")
            return
        self.bus.accept(d)
        if not relay.final:
            self._send(relay.hops, relay.tag, relay.payload, now, relay.index + 1)
            return
        if relay.tag == "sync_pdu":
            self._arrive_sync_pdu(relay.payload, now, d.message.destination)
            return
        getattr(self, f"_arrive_{relay.tag}")(relay.payload, now)

    def _injected_loss(self, dest: str, pdu) -> bool:
        du = int(dest.split(":")[1])
        return any(
            l.du == du and l.packet == pdu.packet_number and (l.sequence is None or l.sequence == pdu.sync_sequence)
            for l in self.sc.faults.pdu_loss
        )

    def _access_hops(self, ue: int, body: BodyKind, uplink: bool) -> list[Hop]:
        cell = self.ctx[ue].serving_cell
        du = f"du:{self.t.du_of_cell(cell)}"
        cu = f"cu:{self.t.cu_of_cell(cell)}"
        up = [(f"ue:{ue}", du, InterfaceKind.Uu, body), (du, cu, InterfaceKind.F1C, body)]
        if uplink:
            return up
        return [(b, a, k, bk) for a, b, k, bk in reversed(up)]

    # -- run loop ------------------------------------------------------------

    def run(self) -> RunResult:
        handlers = {
            EventKind.MESSAGE_DELIVERY: self._on_delivery,
            EventKind.TRAFFIC_ARRIVAL: self._on_traffic,
            EventKind.TIMER: self._on_timer,
            EventKind.MEASUREMENT_REPORT: self._on_measurement,
            EventKind.MOBILITY_STEP: self._on_mobility,
            EventKind.SERVICE_REQUEST: self._on_service_request,
        }
        while self.q:
            ev = self.q.pop()
            handlers[ev.kind](ev.payload, ev.time_us)
        return self._finish()

    def _timer(self, at: int, payload: tuple, phase: int = PHASE_DEFAULT) -> None:
        self.q.push(at, EventKind.TIMER, payload, phase)

    def _on_timer(self, payload: tuple, now: int) -> None:
        getattr(self, f"_timer_{payload[0]}")(*payload[1:], now=now)

    # -- UE state ------------------------------------------------------------

    def _set_ctx(self, new: UeContext, trigger: str, now: int) -> None:
        old = self.ctx[new.ue_id]
        check_context(new)
        self.ctx[new.ue_id] = new
        self.m.log("state", (now, new.ue_id, old.rrc_state.value, new.rrc_state.value, trigger, new.uplink_messages))

    def _on_traffic(self, payload: tuple, now: int) -> None:
        if payload[0] == "multicast":
            self._multicast_pdu(payload[1], now)
            return
        ue = payload[1]
        ctx = self.ctx[ue]
        self.m.incr("unicast_arrivals")
        if ue in self.procedure or ctx.rrc_state is not RrcState.CONNECTED:
            self.pending_data.setdefault(ue, []).append(now)
            if ue not in self.procedure:
                self._start_connect(ue, now)
            return
        self._set_ctx(report_activity(ctx, ActivityKind.UNICAST_DATA, now), "unicast_data", now)
        self._send_user_data(ue, now)
        self._arm_timers(ue, now)

    def _send_user_data(self, ue: int, now: int) -> None:
        cell = self.ctx[ue].serving_cell
        du = f"du:{self.t.du_of_cell(cell)}"
        cu = f"cu:{self.t.cu_of_cell(cell)}"
        hops = [("upf", cu, InterfaceKind.N3, BodyKind.USER_DATA),
                (cu, du, InterfaceKind.F1U, BodyKind.USER_DATA),
                (du, f"ue:{ue}", InterfaceKind.Uu, BodyKind.USER_DATA)]
        self._send(hops, "user_data", (ue, now), now)

    def _arrive_user_data(self, payload: tuple, now: int) -> None:
        ue, sent = payload
        self.m.sample("up", now - sent)
        self.m.incr("unicast_delivered")

    def _start_connect(self, ue: int, now: int) -> None:
        ctx = self.ctx[ue]
        kind = "resume" if ctx.rrc_state is RrcState.INACTIVE else "setup"
        self.procedure[ue] = (kind, now)
        hops = self._access_hops(ue, BodyKind.RRC, uplink=True)
        serving_cu = hops[-1][1]
        if kind == "resume" and ctx.anchor_gnb is not None and f"cu:{ctx.anchor_gnb}" != serving_cu:
            anchor = f"cu:{ctx.anchor_gnb}"
            hops += [(serving_cu, anchor, InterfaceKind.XnC, BodyKind.RRC),
                     (anchor, serving_cu, InterfaceKind.XnC, BodyKind.RRC)]
        self._send(hops, "connect_request", ue, now)

    def _arrive_connect_request(self, ue: int, now: int) -> None:
        self._timer(now + self.policy.budget.rrc_processing_us, ("rrc_processed", ue))

    def _timer_rrc_processed(self, ue: int, now: int) -> None:
        kind, _ = self.procedure[ue]
        if kind == "resume":
            self._send(self._access_hops(ue, BodyKind.RRC, uplink=False), "connect_complete", ue, now)
            return
        cu = f"cu:{self.t.cu_of_cell(self.ctx[ue].serving_cell)}"
        self._send([(cu, "amf", InterfaceKind.N2, BodyKind.PDU_SESSION)], "core_request", ue, now)

    def _arrive_core_request(self, ue: int, now: int) -> None:
        self._timer(now + self.policy.budget.core_processing_us, ("core_processed", ue))

    def _timer_core_processed(self, ue: int, now: int) -> None:
        cu = f"cu:{self.t.cu_of_cell(self.ctx[ue].serving_cell)}"
        hops = [("amf", cu, InterfaceKind.N2, BodyKind.PDU_SESSION)] + self._access_hops(ue, BodyKind.RRC, uplink=False)
        self._send(hops, "connect_complete", ue, now)

    def _arrive_connect_complete(self, ue: int, now: int) -> None:
        kind, started = self.procedure.pop(ue)
        ctx = self.ctx[ue]
        model = (self.latency.resume_latency_us(ctx.serving_cell, ctx.anchor_gnb) if kind == "resume"
                 else self.latency.setup_latency_us(ctx.serving_cell))
        measured = now - started
        self.m.sample(f"cp_{kind}", measured)
        if not self._has_jitter and measured != model:
            raise RuntimeInvariantViolation(f"ue {ue}: {kind} took {measured} us, latency model says {model} us")
        cu = self.t.cu_of_cell(ctx.serving_cell)
        self._set_ctx(report_activity(ctx, ActivityKind.UNICAST_DATA, now, cu), kind, now)
        for _ in self.pending_data.pop(ue, []):
            self._send_user_data(ue, now)
        self._arm_timers(ue, now)

    @property
    def _has_jitter(self) -> bool:
        return any(l.jitter_us for l in self.t.links) or bool(self.bus.spikes)

    def _arm_timers(self, ue: int, now: int) -> None:
        inact = self.policy.inactivity
        self._timer(now + inact.inactivity_timeout_us, ("inactivity", ue))
        self._timer(now + inact.idle_release_timeout_us, ("idle_release", ue))

    def _timer_inactivity(self, ue: int, now: int) -> None:
        ctx = self.ctx[ue]
        if ctx.rrc_state is not RrcState.CONNECTED or ue in self.procedure:
            return
        if now - ctx.last_unicast_activity_us < self.policy.inactivity.inactivity_timeout_us:
            return
        if self.policy.keep_connected and self._would_be_all_dtch(ue, now):
            self.m.incr("suspend_suppressed")
            self.m.log("state", (now, ue, "Connected", "Connected", "keep_connected", ctx.uplink_messages))
            return
        rbma = self.registry.rbma_for_cell(ctx.serving_cell)
        new = suspend_to_inactive(ctx, rbma.rbma_id, self._g_rnti(rbma.rbma_id), now, self.policy.inactivity)
        self._set_ctx(new, "suspend", now)
        self._send(self._access_hops(ue, BodyKind.RRC, uplink=False), "rrc_notice", ue, now)

    def _timer_idle_release(self, ue: int, now: int) -> None:
        ctx = self.ctx[ue]
        if ctx.rrc_state is RrcState.IDLE or ue in self.procedure:
            return
        if now - ctx.last_unicast_activity_us < self.policy.inactivity.idle_release_timeout_us:
            return
        hops = self._access_hops(ue, BodyKind.RRC, uplink=False)
        self._set_ctx(release_to_idle(ctx, now, self.policy.inactivity), "release", now)
        self._send(hops, "rrc_notice", ue, now)

    def _arrive_rrc_notice(self, ue: int, now: int) -> None:
        self.m.incr("rrc_notices")

    def _would_be_all_dtch(self, ue: int, now: int) -> bool:
        """Suspending gains nothing when the XRB would serve every receiver over DTCH anyway."""
        if self.xrb is None or ue not in self.interested:
            return False
        targets = self._multicast_targets() | {ue}
        decision = decide_channels(targets, self.reports, self.xrb, now)
        return not decision.xtch_ues

    def _on_measurement(self, rep: MeasurementReport, now: int) -> None:
        if self.ctx[rep.ue_id].rrc_state is RrcState.CONNECTED:
            self.reports[rep.ue_id] = rep
            self.m.incr("measurement_reports")
        else:
            self.m.incr("measurement_reports_ignored")

    def _on_mobility(self, wp, now: int) -> None:
        ctx = self.ctx[wp.ue_id]
        if wp.ue_id in self.procedure:
            self.m.incr("mobility_steps_during_procedure")
            return
        if ctx.rrc_state is RrcState.CONNECTED:
            if ctx.capability is Capability.NORMAL:
                self._on_measurement(MeasurementReport(wp.ue_id, ctx.serving_cell, wp.rsrp_dbm[ctx.serving_cell], now), now)
            return
        target = best_cell(dict(wp.rsrp_dbm), ctx.serving_cell, self.policy.inactivity.reselection_hysteresis_db)
        if target is None:
            return
        new, outcome = cell_reselect(ctx, target, now, self.registry)
        self.m.incr("reselections")
        trigger = f"reselect:{type(outcome).__name__}"
        self._set_ctx(new, trigger, now)
        if isinstance(outcome, NoSignal):
            if ctx.rrc_state is RrcState.INACTIVE:
                self.m.incr("reselections_in_rbma")
            return
        self.m.incr("rbma_updates")
        self.m.log("rbma_updates", (now, wp.ue_id, outcome.old_rbma_id, outcome.new_rbma_id, target,
                                    ",".join(map(str, outcome.area_setup_cus))))
        self._send(self._access_hops(wp.ue_id, BodyKind.RBMA_UPDATE, uplink=True), "rbma_update",
                   (wp.ue_id, outcome), now)

    def _arrive_rbma_update(self, payload: tuple, now: int) -> None:
        ue, outcome = payload
        anchor = f"cu:{outcome.anchor_gnb}"
        for cu in outcome.area_setup_cus:
            self.m.incr("area_setups")
            self._send([(anchor, f"cu:{cu}", InterfaceKind.XnC, BodyKind.RBMA_SETUP)], "rrc_notice", None, now)
        self._send(self._access_hops(ue, BodyKind.RBMA_UPDATE, uplink=False), "rrc_notice", ue, now)

    # -- multicast over XRB ------------------------------------------------

    def _multicast_targets(self) -> set[int]:
        return {
            u for u in self.interested
            if self.ctx[u].rrc_state in (RrcState.CONNECTED, RrcState.INACTIVE) and u not in self.procedure
        }

    def _multicast_pdu(self, burst, now: int) -> None:
        cfg = self.xrb
        targets = sorted(self._multicast_targets())
        self.m.incr("multicast_pdus")
        if not targets:
            self.m.incr("multicast_pdus_without_receivers")
            return
        decision = decide_channels(targets, self.reports, cfg, now)
        assignment, reasons = dict(decision.assignment), dict(decision.reasons)
        for u in targets:
            ctx = self.ctx[u]
            if ctx.rrc_state is RrcState.INACTIVE:
                if ctx.serving_cell not in self.registry.cells_of(ctx.rbma_id):
                    raise RuntimeInvariantViolation(f"ue {u} receives multicast outside its RBMA")
                if assignment[u] is Channel.DTCH:
                    # no unicast bearer while suspended: stays on the multicast radio bearer
                    assignment[u] = Channel.XTCH
                    reasons[u] = Reason.SUSPENDED
        decision = SwitchingDecision(cfg.xrb_id, assignment, reasons, decision.ue_mcs,
                                     decision.estimated_prb_cost_unicast,
                                     assignment_cost(assignment, decision.ue_mcs, cfg.payload_bits))
        for u in targets:
            self.m.log("decision", (now, cfg.xrb_id, u, assignment[u].value, reasons[u].value))
        self.m.incr("prb_cost_all_unicast", decision.estimated_prb_cost_unicast)
        self.m.incr("prb_cost_selected", decision.estimated_prb_cost_multicast)
        sn = self.next_sn
        self.next_sn += 1
        self.expected_deliveries[sn] = tuple(targets)
        dup = [u for u in burst.duplicate_for if u in targets]
        for copy in route_pdu(PdcpPdu(sn), decision, duplicate_for=dup, cfg=cfg):
            self.m.incr(f"copies_{copy.channel.value.lower()}")
            by_du: dict[int, list[int]] = {}
            for u in copy.ue_ids:
                by_du.setdefault(self.t.du_of_cell(self.ctx[u].serving_cell), []).append(u)
            for du, ues in sorted(by_du.items()):
                cu = f"cu:{self.t.cu_of_du(du)}"
                if copy.channel is Channel.XTCH:
                    area = self.registry.rbma_for_cell(self.ctx[ues[0]].serving_cell, create=False)
                    if area is not None:
                        self.tunnels.open(area.rbma_id, cu, du)
                dest = f"ue:{ues[0]}" if copy.channel is Channel.DTCH else f"ue:xtch{cfg.xrb_id}"
                hops = [(cu, f"du:{du}", InterfaceKind.F1U, BodyKind.USER_DATA),
                        (f"du:{du}", dest, InterfaceKind.Uu, BodyKind.USER_DATA)]
                self._send(hops, "multicast_copy", (sn, tuple(ues)), now)

    def _arrive_multicast_copy(self, payload: tuple, now: int) -> None:
        sn, ues = payload
        for u in ues:
            if self.dedup.check(u, sn).value == "Deliver":
                self.deliveries[(sn, u)] = self.deliveries.get((sn, u), 0) + 1
                self.m.incr("multicast_delivered")
            else:
                self.m.incr("multicast_duplicates_discarded")

    # -- RAN-SYNC streams ----------------------------------------------------

    def _on_service_request(self, payload: tuple, now: int) -> None:
        _, stream = payload
        setup = stream.setup
        stream.pending_responses = len(setup.control_paths)
        if not stream.pending_responses:
            self._stream_ready(stream, now)
            return
        for node, path in sorted(setup.control_paths.items()):
            hops, cur = [], setup.master
            for link in path:
                nxt = link.other(cur)
                hops.append((cur, nxt, link.kind, BodyKind.SYNC_NEGOTIATION))
                cur = nxt
            self._send(hops, "sync_offer", (stream, node, tuple(hops)), now)

    def _arrive_sync_offer(self, payload: tuple, now: int) -> None:
        stream, node, hops = payload
        if node.startswith("du:"):
            du = int(node.split(":")[1])
            stream.receivers[du] = SyncReceiver(du, stream.setup.params, self.offsets[du], strict=True)
        back = tuple((b, a, k, bk) for a, b, k, bk in reversed(hops))
        self._send(back, "sync_answer", stream, now)

    def _arrive_sync_answer(self, stream: _Stream, now: int) -> None:
        stream.pending_responses -= 1
        if stream.pending_responses == 0:
            self._stream_ready(stream, now)

    def _stream_ready(self, stream: _Stream, now: int) -> None:
        stream.negotiated_at = now
        p = stream.setup.params
        first = p.epoch_us if now <= p.epoch_us else p.next_boundary_after(now - 1)
        self._schedule_generation(stream, first)

    def _schedule_generation(self, stream: _Stream, at: int) -> None:
        stop = stream.spec.stop_us if stream.spec.stop_us is not None else self.sc.duration_us
        if at < stop:
            self._timer(at, ("sync_generate", stream))

    def _timer_sync_generate(self, stream: _Stream, now: int) -> None:
        spec = stream.spec
        k = (now - stream.setup.params.epoch_us) // stream.setup.params.period_us
        chunks = [_content(spec.sequence, k, j, spec.chunk_octets) for j in range(spec.chunks_per_period)]
        pdus = stream.sender.encapsulate(chunks, now)
        tta = pdus[0].tta_us
        for pdu in pdus:
            self._fan_out(stream, pdu, now)
        self.m.incr("sync_pdus_generated", len(pdus))
        self._timer(stream.sender.close_time(tta), ("sync_close", stream, tta))
        self._timer(tta, ("sync_emit", stream), PHASE_EMIT)
        self._timer(tta, ("sync_check", stream, stream.setup.params.period_of(tta)), PHASE_CHECK)
        self._schedule_generation(stream, now + stream.setup.params.period_us)

    def _timer_sync_close(self, stream: _Stream, tta: int, now: int) -> None:
        self._fan_out(stream, stream.sender.close_period(tta), now)

    def _fan_out(self, stream: _Stream, pdu, now: int) -> None:
        master = stream.setup.master
        for du in stream.du_ids:
            self.tunnels.open(stream.rbma_id, master, du)
            hops, cur = [], master
            for link in stream.setup.data_paths[f"du:{du}"]:
                nxt = link.other(cur)
                hops.append((cur, nxt, link.kind, BodyKind.SYNC_PDU))
                cur = nxt
            self._send(hops, "sync_pdu", (stream, pdu), now)

    def _arrive_sync_pdu(self, payload: tuple, now: int, dest: str) -> None:
        stream, pdu = payload
        du = int(dest.split(":")[1])
        slack = pdu.tta_us - now
        stream.min_slack[du] = min(slack, stream.min_slack.get(du, slack))
        total, n = stream.slack_sum.get(du, (0, 0))
        stream.slack_sum[du] = (total + slack, n + 1)
        stream.receivers[du].ingest(pdu, now)

    def _timer_sync_emit(self, stream: _Stream, now: int) -> None:
        for du in stream.du_ids:
            for e in stream.receivers[du].emit_due(now):
                stream.emissions.setdefault(e.period, {}).setdefault(du, []).append(e)
                self.m.log("emission", (du, e.period, e.time_us, e.content_hash, int(e.muted),
                                        e.sync_sequence, "" if e.packet_number is None else e.packet_number))
                self.m.incr("sync_pdus_muted" if e.muted else "sync_pdus_emitted")

    def _timer_sync_check(self, stream: _Stream, period: int, now: int) -> None:
        by_du = stream.emissions.pop(period, {})
        rbma = self.registry.get(stream.rbma_id)
        events = transmission_events(self.registry, stream.service_id, by_du)
        verdict = check_sfn_alignment(events, rbma, self.policy.alignment_tolerance_us)
        self.m.incr("sfn_periods")
        self.m.incr("sfn_muted_cells", len(verdict.muted_cells))
        for du, ems in by_du.items():
            if du not in stream.first_hash and ems and not any(e.muted for e in ems):
                stream.first_hash[du] = period_hash(ems)
        if verdict.aligned:
            self.m.incr("sfn_aligned")
            self.m.log("alignment", (stream.service_id, period, now, "Aligned",
                                     _ids(verdict.muted_cells), "", ""))
            return
        self.m.incr("sfn_misaligned")
        self.m.log("alignment", (stream.service_id, period, now, "Misaligned", _ids(verdict.muted_cells),
                                 _ids(verdict.deviating_cells), "; ".join(verdict.details)))
        member_offsets = {self.offsets[self.t.du_of_cell(c)] for c in rbma.cell_ids}
        if len(member_offsets) == 1:
            raise RuntimeInvariantViolation(
                f"SFN {stream.service_id} period {period} misaligned with synchronised clocks: {verdict.details}"
            )

    # -- wrap-up -------------------------------------------------------------

    def _finish(self) -> RunResult:
        self.bus.check_conservation()
        for ue, ctx in sorted(self.ctx.items()):
            check_context(ctx)
            if ctx.uplink_messages != self.uplink_seen.get(ue, 0):
                raise RuntimeInvariantViolation(
                    f"ue {ue}: context counts {ctx.uplink_messages} uplink messages, links carried "
                    f"{self.uplink_seen.get(ue, 0)}"
                )
        for sn, targets in sorted(self.expected_deliveries.items()):
            for u in targets:
                n = self.deliveries.get((sn, u), 0)
                if n != 1:
                    raise RuntimeInvariantViolation(f"PDCP SN {sn} delivered {n} times to ue {u}")
        self.registry.check_safety()

        sfn_cells = {c for r in self.registry.rbmas if r.mode is RbmaMode.SFN for c in r.cell_ids}
        for ue, ctx in sorted(self.ctx.items()):
            if ctx.serving_cell in sfn_cells:
                self.m.incr("ues_covered_by_sfn")
                if ctx.rrc_state is RrcState.IDLE:
                    self.m.incr("idle_or_rom_ues_covered_by_sfn")
            if ctx.is_rom:
                self.m.incr("rom_uplink_messages", ctx.uplink_messages)

        frames = []
        hashes_by_cell: dict[int, dict[str, str]] = {}
        for s in self.streams:
            for du, h in s.first_hash.items():
                for c in self.t.dus[du].served_cells:
                    hashes_by_cell.setdefault(c, {})[s.service_id] = h
        for cell in sorted(self.t.cells):
            frame = build_frame(self.registry, cell, 0, self.policy.unicast_demand_prbs, hashes_by_cell.get(cell))
            check_grid_exclusive(frame)
            frames.append(frame)

        reuse = None
        if self.sc.reuse3 is not None:
            reuse = plan_reuse3(self.t, [self.registry.get(i) for i in self.sc.reuse3.rbmas],
                                self.sc.reuse3.radius_km)

        streams = []
        for s in self.streams:
            p = s.setup.params
            streams.append({
                "service": s.service_id, "rbma": s.rbma_id, "master": s.setup.master,
                "participants": list(s.setup.participants), "period_ms": p.sync_period_ms,
                "sequence": p.sync_sequence, "epoch_us": p.epoch_us, "headroom_us": p.headroom_us,
                "negotiated_at_us": s.negotiated_at,
                "min_arrival_slack_us": {str(du): v for du, v in sorted(s.min_slack.items())},
                "mean_arrival_slack_us": {str(du): round(t / n, 3) for du, (t, n) in sorted(s.slack_sum.items())},
            })
        messages = {
            "sent": self.bus.sent, "delivered": self.bus.delivered, "dropped": len(self.bus.dropped),
            "per_interface": dict(sorted(self.bus.per_interface.items())),
            "xcast_tunnels": [
                {"tunnel_id": x.tunnel_id, "rbma": x.rbma_id, "endpoints": list(x.endpoints)}
                for x in self.tunnels.active()
            ],
            "drops": [
                {"time_us": t, "msg_id": d.msg_id, "interface": d.message.interface_kind.value,
                 "destination": d.message.destination, "reason": r}
                for t, d, r in self.bus.dropped
            ],
        }
        self.m.incr("events", self.q.popped)
        return RunResult(self.sc, self.seed, self.t, self.registry, self.m, dict(self.ctx), frames, reuse,
                         self.admission, streams, self.q.popped, messages)


def _ids(cells) -> str:
    return " ".join(str(c) for c in cells)


def _content(sequence: int, period: int, index: int, octets: int) -> bytes:
    """Deterministic stand-in payload for one chunk of a broadcast stream."""
    out = b""
    counter = 0
    while len(out) < octets:
        out += hashlib.sha256(f"{sequence}:{period}:{index}:{counter}".encode()).digest()
        counter += 1
    return out[:octets]


def run_scenario(scenario: Scenario | str | Path, seed: int | None = None) -> RunResult:
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    return Simulation(scenario, seed).run()
