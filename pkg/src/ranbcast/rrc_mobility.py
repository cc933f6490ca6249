"""UE RRC states, RBMA-aware reselection and the resume/setup latency model.

Contexts are immutable; every operation returns a new :class:`UeContext`.
A receive-only UE is represented by a ghost context that exists only on
the harness side for coverage accounting; any network-facing operation
on it raises :class:`RomUeHasNoContext`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Union

from .errors import PreconditionNotMet, RomUeHasNoContext, RuntimeInvariantViolation, UnknownCell
from .rbma import RbmaRegistry
from .topology import InterfaceKind, Topology


class RrcState(str, enum.Enum):
    CONNECTED = "Connected"
    INACTIVE = "Inactive"
    IDLE = "Idle"


class Capability(str, enum.Enum):
    NORMAL = "Normal"
    RECEIVE_ONLY = "ReceiveOnly"


class CmState(str, enum.Enum):
    CM_CONNECTED = "CmConnected"
    CM_IDLE = "CmIdle"


class ActivityKind(str, enum.Enum):
    UNICAST_DATA = "UnicastData"
    MULTICAST_INTEREST = "MulticastInterest"


@dataclass(frozen=True)
class InactivityPolicy:
    inactivity_timeout_us: int = 10_000_000
    idle_release_timeout_us: int = 60_000_000
    reselection_hysteresis_db: float = 3.0

    def __post_init__(self) -> None:
        if not 0 <= self.inactivity_timeout_us < self.idle_release_timeout_us:
            raise PreconditionNotMet("inactivity timeout must be below the idle release timeout")


@dataclass(frozen=True)
class UeContext:
    ue_id: int
    rrc_state: RrcState = RrcState.IDLE
    capability: Capability = Capability.NORMAL
    serving_cell: int | None = None
    anchor_gnb: int | None = None
    rbma_id: int | None = None
    g_rnti: int | None = None
    cm_state: CmState = CmState.CM_IDLE
    last_unicast_activity_us: int = 0
    multicast_interest: bool = False
    multicast_over_unicast: bool = False
    has_ran_context: bool = False
    uplink_messages: int = 0

    @property
    def is_rom(self) -> bool:
        return self.capability is Capability.RECEIVE_ONLY


def new_context(ue_id: int, serving_cell: int, capability: Capability | str = Capability.NORMAL) -> UeContext:
    """A UE camping in Idle on ``serving_cell`` (or a ROM ghost entry)."""
    return UeContext(ue_id, RrcState.IDLE, Capability(capability), serving_cell)


def check_context(ctx: UeContext) -> None:
    """Raise RuntimeInvariantViolation if ``ctx`` breaks a state invariant."""
    problems = []
    if ctx.rrc_state is RrcState.INACTIVE:
        if ctx.cm_state is not CmState.CM_CONNECTED:
            problems.append("Inactive UE must stay CM-Connected")
        if ctx.rbma_id is None or ctx.g_rnti is None:
            problems.append("Inactive UE must hold an RBMA id and G-RNTI")
    if ctx.rrc_state is RrcState.IDLE and not ctx.is_rom:
        if ctx.rbma_id is not None or ctx.g_rnti is not None or ctx.has_ran_context:
            problems.append("Idle UE must hold no RBMA, G-RNTI or RAN context")
        if ctx.cm_state is not CmState.CM_IDLE:
            problems.append("Idle UE must be CM-Idle")
    if ctx.is_rom and (ctx.has_ran_context or ctx.uplink_messages):
        problems.append("receive-only UE has network state or uplink traffic")
    if problems:
        raise RuntimeInvariantViolation(f"ue {ctx.ue_id}: " + "; ".join(problems))


def _reject_rom(ctx: UeContext) -> None:
    if ctx.is_rom:
        raise RomUeHasNoContext(f"ue {ctx.ue_id} is receive-only; the network holds no context")


def report_activity(
    ctx: UeContext, kind: ActivityKind | str, now_us: int, serving_gnb: int | None = None
) -> UeContext:
    """Unicast activity pulls the UE into Connected; multicast interest is recorded.

    A Connected UE interested in multicast gets it over its unicast bearers.
    """
    _reject_rom(ctx)
    kind = ActivityKind(kind)
    if kind is ActivityKind.MULTICAST_INTEREST:
        ctx = replace(ctx, multicast_interest=True)
        if ctx.rrc_state is RrcState.CONNECTED:
            ctx = replace(ctx, multicast_over_unicast=True)
        return ctx
    if ctx.rrc_state is not RrcState.CONNECTED:
        # resume or setup both need an uplink request
        ctx = _connect(ctx, serving_gnb)
    return replace(ctx, last_unicast_activity_us=now_us)


def _connect(ctx: UeContext, serving_gnb: int | None) -> UeContext:
    return replace(
        ctx,
        rrc_state=RrcState.CONNECTED,
        cm_state=CmState.CM_CONNECTED,
        anchor_gnb=ctx.anchor_gnb if serving_gnb is None else serving_gnb,
        rbma_id=None,
        g_rnti=None,
        has_ran_context=True,
        multicast_over_unicast=ctx.multicast_interest,
        uplink_messages=ctx.uplink_messages + 1,
    )


def suspend_to_inactive(
    ctx: UeContext, rbma_id: int, g_rnti: int, now_us: int, policy: InactivityPolicy = InactivityPolicy()
) -> UeContext:
    _reject_rom(ctx)
    if ctx.rrc_state is not RrcState.CONNECTED:
        raise PreconditionNotMet(f"ue {ctx.ue_id}: suspend needs Connected, state is {ctx.rrc_state.value}")
    idle_for = now_us - ctx.last_unicast_activity_us
    if idle_for < policy.inactivity_timeout_us:
        raise PreconditionNotMet(
            f"ue {ctx.ue_id}: active {idle_for} us ago < inactivity timeout {policy.inactivity_timeout_us} us"
        )
    return replace(
        ctx,
        rrc_state=RrcState.INACTIVE,
        cm_state=CmState.CM_CONNECTED,
        rbma_id=rbma_id,
        g_rnti=g_rnti,
        multicast_over_unicast=False,
    )


def release_to_idle(ctx: UeContext, now_us: int, policy: InactivityPolicy = InactivityPolicy()) -> UeContext:
    _reject_rom(ctx)
    if ctx.rrc_state is RrcState.IDLE:
        raise PreconditionNotMet(f"ue {ctx.ue_id} is already Idle")
    idle_for = now_us - ctx.last_unicast_activity_us
    if idle_for < policy.idle_release_timeout_us:
        raise PreconditionNotMet(
            f"ue {ctx.ue_id}: active {idle_for} us ago < idle release timeout {policy.idle_release_timeout_us} us"
        )
    return replace(
        ctx,
        rrc_state=RrcState.IDLE,
        cm_state=CmState.CM_IDLE,
        anchor_gnb=None,
        rbma_id=None,
        g_rnti=None,
        has_ran_context=False,
        multicast_over_unicast=False,
    )


def resume_to_connected(ctx: UeContext, now_us: int | None = None) -> UeContext:
    """Inactive to Connected using the stored context (one uplink resume request)."""
    _reject_rom(ctx)
    if ctx.rrc_state is not RrcState.INACTIVE:
        raise PreconditionNotMet(f"ue {ctx.ue_id}: resume needs Inactive, state is {ctx.rrc_state.value}")
    ctx = _connect(ctx, None)
    if now_us is not None:
        ctx = replace(ctx, last_unicast_activity_us=now_us)
    return ctx


# -- reselection -----------------------------------------------------------


@dataclass(frozen=True)
class NoSignal:
    cell_id: int
    uplink_messages: int = 0


@dataclass(frozen=True)
class RbmaUpdateRequired:
    cell_id: int
    old_rbma_id: int
    new_rbma_id: int
    g_rnti: int
    anchor_gnb: int
    # CUs beyond the anchor that must join via a RAN-based multicast area setup
    area_setup_cus: tuple[int, ...] = ()
    uplink_messages: int = 1

    @property
    def area_setup(self) -> bool:
        return bool(self.area_setup_cus)


ReselectOutcome = Union[NoSignal, RbmaUpdateRequired]


def cell_reselect(
    ctx: UeContext, new_cell: int, now_us: int, registry: RbmaRegistry
) -> tuple[UeContext, ReselectOutcome]:
    """Camp on ``new_cell``; signal the network only when leaving the stored RBMA."""
    t = registry.topology
    if new_cell not in t.cells:
        raise UnknownCell(f"cell {new_cell} is not defined")
    if ctx.is_rom or ctx.rrc_state is RrcState.IDLE:
        # no RAN context: the UE just camps (tracking-area updates are not modelled)
        return replace(ctx, serving_cell=new_cell), NoSignal(new_cell)
    if ctx.rrc_state is not RrcState.INACTIVE:
        raise PreconditionNotMet(f"ue {ctx.ue_id}: reselection in Connected is handover, not modelled")
    if new_cell == ctx.serving_cell or new_cell in registry.cells_of(ctx.rbma_id):
        return replace(ctx, serving_cell=new_cell), NoSignal(new_cell)
    rbma = registry.rbma_for_cell(new_cell)
    anchor = t.cu_of_cell(new_cell)
    cus = sorted({t.cu_of_cell(c) for c in registry.cells_of(rbma.rbma_id)} - {anchor})
    outcome = RbmaUpdateRequired(new_cell, ctx.rbma_id, rbma.rbma_id, ctx.g_rnti, anchor, tuple(cus))
    ctx = replace(
        ctx,
        serving_cell=new_cell,
        rbma_id=rbma.rbma_id,
        anchor_gnb=anchor,
        uplink_messages=ctx.uplink_messages + outcome.uplink_messages,
    )
    return ctx, outcome


def best_cell(rsrp_by_cell: dict[int, float], serving_cell: int | None, hysteresis_db: float = 3.0) -> int | None:
    """Reselection target: the strongest cell if it beats serving by more than the hysteresis."""
    if not rsrp_by_cell:
        return None
    best = max(sorted(rsrp_by_cell), key=lambda c: rsrp_by_cell[c])
    if serving_cell is None or serving_cell not in rsrp_by_cell:
        return best
    if best != serving_cell and rsrp_by_cell[best] > rsrp_by_cell[serving_cell] + hysteresis_db:
        return best
    return None


# -- totality ----------------------------------------------------------------


class RrcEvent(str, enum.Enum):
    UNICAST_DATA = "UnicastData"
    MULTICAST_INTEREST = "MulticastInterest"
    SUSPEND = "Suspend"
    RESELECT = "Reselect"
    RELEASE = "Release"
    RESUME = "Resume"


class UeKind(str, enum.Enum):
    CONNECTED = "Connected"
    INACTIVE = "Inactive"
    IDLE = "Idle"
    RECEIVE_ONLY = "ReceiveOnly"


def ue_kind(ctx: UeContext) -> UeKind:
    return UeKind.RECEIVE_ONLY if ctx.is_rom else UeKind(ctx.rrc_state.value)


# Outcome per (kind, event): the resulting RRC state, or the error raised.
# Suspend and release assume their timers have expired.
TRANSITIONS: dict[tuple[UeKind, RrcEvent], RrcState | type[Exception]] = {
    (UeKind.CONNECTED, RrcEvent.UNICAST_DATA): RrcState.CONNECTED,
    (UeKind.CONNECTED, RrcEvent.MULTICAST_INTEREST): RrcState.CONNECTED,
    (UeKind.CONNECTED, RrcEvent.SUSPEND): RrcState.INACTIVE,
    (UeKind.CONNECTED, RrcEvent.RESELECT): PreconditionNotMet,
    (UeKind.CONNECTED, RrcEvent.RELEASE): RrcState.IDLE,
    (UeKind.CONNECTED, RrcEvent.RESUME): PreconditionNotMet,
    (UeKind.INACTIVE, RrcEvent.UNICAST_DATA): RrcState.CONNECTED,
    (UeKind.INACTIVE, RrcEvent.MULTICAST_INTEREST): RrcState.INACTIVE,
    (UeKind.INACTIVE, RrcEvent.SUSPEND): PreconditionNotMet,
    (UeKind.INACTIVE, RrcEvent.RESELECT): RrcState.INACTIVE,
    (UeKind.INACTIVE, RrcEvent.RELEASE): RrcState.IDLE,
    (UeKind.INACTIVE, RrcEvent.RESUME): RrcState.CONNECTED,
    (UeKind.IDLE, RrcEvent.UNICAST_DATA): RrcState.CONNECTED,
    (UeKind.IDLE, RrcEvent.MULTICAST_INTEREST): RrcState.IDLE,
    (UeKind.IDLE, RrcEvent.SUSPEND): PreconditionNotMet,
    (UeKind.IDLE, RrcEvent.RESELECT): RrcState.IDLE,
    (UeKind.IDLE, RrcEvent.RELEASE): PreconditionNotMet,
    (UeKind.IDLE, RrcEvent.RESUME): PreconditionNotMet,
    (UeKind.RECEIVE_ONLY, RrcEvent.UNICAST_DATA): RomUeHasNoContext,
    (UeKind.RECEIVE_ONLY, RrcEvent.MULTICAST_INTEREST): RomUeHasNoContext,
    (UeKind.RECEIVE_ONLY, RrcEvent.SUSPEND): RomUeHasNoContext,
    (UeKind.RECEIVE_ONLY, RrcEvent.RESELECT): RrcState.IDLE,
    (UeKind.RECEIVE_ONLY, RrcEvent.RELEASE): RomUeHasNoContext,
    (UeKind.RECEIVE_ONLY, RrcEvent.RESUME): RomUeHasNoContext,
}


def apply_event(
    ctx: UeContext,
    event: RrcEvent | str,
    now_us: int,
    registry: RbmaRegistry,
    *,
    target_cell: int | None = None,
    rbma_id: int | None = None,
    g_rnti: int = 1,
    policy: InactivityPolicy = InactivityPolicy(),
) -> UeContext:
    """Dispatch one event to its operation (used by the totality check and the harness)."""
    event = RrcEvent(event)
    handlers: dict[RrcEvent, Callable[[], UeContext]] = {
        RrcEvent.UNICAST_DATA: lambda: report_activity(
            ctx, ActivityKind.UNICAST_DATA, now_us, registry.topology.cu_of_cell(ctx.serving_cell)
        ),
        RrcEvent.MULTICAST_INTEREST: lambda: report_activity(ctx, ActivityKind.MULTICAST_INTEREST, now_us),
        RrcEvent.SUSPEND: lambda: suspend_to_inactive(
            ctx,
            rbma_id if rbma_id is not None else registry.rbma_for_cell(ctx.serving_cell).rbma_id,
            g_rnti, now_us, policy,
        ),
        RrcEvent.RESELECT: lambda: cell_reselect(
            ctx, target_cell if target_cell is not None else ctx.serving_cell, now_us, registry
        )[0],
        RrcEvent.RELEASE: lambda: release_to_idle(ctx, now_us, policy),
        RrcEvent.RESUME: lambda: resume_to_connected(ctx, now_us),
    }
    out = handlers[event]()
    check_context(out)
    return out


# -- latency -----------------------------------------------------------------


@dataclass(frozen=True)
class ProcessingBudget:
    rrc_processing_us: int = 0
    core_processing_us: int = 1

    def __post_init__(self) -> None:
        if self.rrc_processing_us < 0:
            raise PreconditionNotMet("rrc processing time must be >= 0")
        if self.core_processing_us <= 0:
            raise PreconditionNotMet("core processing time must be > 0: setup always involves the core")


@dataclass(frozen=True)
class LatencyModel:
    """Analytic path sums matching the message exchanges the harness simulates."""

    topology: Topology
    budget: ProcessingBudget = field(default_factory=ProcessingBudget)

    def _lat(self, a: str, b: str, kind: InterfaceKind) -> int:
        link = self.topology.link(a, b, kind)
        if link is None:
            raise PreconditionNotMet(f"no {kind.value} link between {a} and {b}")
        return link.latency_us

    def _access(self, cell_id: int) -> tuple[int, int]:
        """One-way UE -> serving CU latency and the serving CU id."""
        t = self.topology
        du = t.du_of_cell(cell_id)
        cu = t.cu_of_du(du)
        return self._lat("ue", f"du:{du}", InterfaceKind.Uu) + self._lat(f"du:{du}", f"cu:{cu}", InterfaceKind.F1C), cu

    def resume_latency_us(self, serving_cell: int, anchor_gnb: int | None = None) -> int:
        one_way, cu = self._access(serving_cell)
        if anchor_gnb is not None and anchor_gnb != cu:
            one_way += self._lat(f"cu:{cu}", f"cu:{anchor_gnb}", InterfaceKind.XnC)
        return 2 * one_way + self.budget.rrc_processing_us

    def setup_latency_us(self, serving_cell: int) -> int:
        one_way, cu = self._access(serving_cell)
        one_way += self._lat(f"cu:{cu}", "amf", InterfaceKind.N2)
        return 2 * one_way + self.budget.rrc_processing_us + self.budget.core_processing_us

    def user_plane_latency_us(self, serving_cell: int) -> int:
        t = self.topology
        du = t.du_of_cell(serving_cell)
        cu = t.cu_of_du(du)
        return (
            self._lat("upf", f"cu:{cu}", InterfaceKind.N3)
            + self._lat(f"cu:{cu}", f"du:{du}", InterfaceKind.F1U)
            + self._lat(f"du:{du}", "ue", InterfaceKind.Uu)
        )
