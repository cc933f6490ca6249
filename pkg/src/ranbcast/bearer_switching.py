"""XRB switching: per-UE choice between DTCH (unicast) and XTCH (multicast).

The decision core is a pure function of the interested UE set, their latest
measurement reports and the XRB configuration. PRB cost comes from a
monotone spectral-efficiency table; the shared XTCH copy is sent at the
MCS of its worst member.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import (
    EmptyUeSet,
    InvalidMeasurement,
    InvalidRlcMode,
    InvalidXrbConfig,
    UndecidedUe,
)

RSRP_RANGE_DBM = (-156.0, -31.0)

# Spectral efficiency (bit/RE) per MCS index, 64QAM table. Index 17 is
# slightly below 16 in the source table; a running maximum keeps cost monotone.
_RAW_EFFICIENCY = (
    0.2344, 0.3066, 0.3770, 0.4902, 0.6016, 0.7402, 0.8770, 1.0273, 1.1758, 1.3262,
    1.3281, 1.4766, 1.6953, 1.9141, 2.1602, 2.4063, 2.5703, 2.5664, 2.7305, 3.0293,
    3.3223, 3.6094, 3.9023, 4.2129, 4.5234, 4.8164, 5.1152, 5.3320, 5.5547,
)
SPECTRAL_EFFICIENCY = tuple(max(_RAW_EFFICIENCY[: i + 1]) for i in range(len(_RAW_EFFICIENCY)))
MAX_MCS = len(SPECTRAL_EFFICIENCY) - 1
DATA_RE_PER_PRB = 132  # 12 subcarriers x 11 data symbols
DEFAULT_PAYLOAD_BITS = 12000


def prb_cost(mcs: int, payload_bits: int = DEFAULT_PAYLOAD_BITS) -> int:
    """PRBs needed to carry ``payload_bits`` at ``mcs``; non-increasing in mcs."""
    if not 0 <= mcs <= MAX_MCS:
        raise ValueError(f"mcs {mcs} outside 0..{MAX_MCS}")
    return math.ceil(payload_bits / (SPECTRAL_EFFICIENCY[mcs] * DATA_RE_PER_PRB))


def mcs_for_rsrp(rsrp_dbm: float, floor_dbm: float = -120.0, ceil_dbm: float = -80.0) -> int:
    """Linear RSRP to MCS map, clamped to the table."""
    if rsrp_dbm <= floor_dbm:
        return 0
    if rsrp_dbm >= ceil_dbm:
        return MAX_MCS
    return int((rsrp_dbm - floor_dbm) * MAX_MCS // (ceil_dbm - floor_dbm))


class Channel(str, enum.Enum):
    DTCH = "Dtch"
    XTCH = "Xtch"


class RlcMode(str, enum.Enum):
    UM = "UM"
    AM = "AM"
    TM = "TM"


class Reason(str, enum.Enum):
    NO_REPORT = "no_report"
    STALE_REPORT = "stale_report"
    BELOW_THRESHOLD = "below_threshold"
    MEETS_THRESHOLD = "meets_threshold"
    MIN_COUNT_GATE = "min_count_gate"
    SUSPENDED = "suspended"  # no unicast bearer while Inactive


@dataclass(frozen=True)
class MeasurementReport:
    ue_id: int
    cell_id: int
    ss_rsrp_dbm: float
    timestamp_us: int
    csi_rsrp_dbm: float | None = None
    ss_rsrq_db: float | None = None
    csi_rsrq_db: float | None = None

    def validate(self, rsrp_range: tuple[float, float] = RSRP_RANGE_DBM) -> MeasurementReport:
        lo, hi = rsrp_range
        for name in ("ss_rsrp_dbm", "csi_rsrp_dbm"):
            v = getattr(self, name)
            if v is not None and not lo <= v <= hi:
                raise InvalidMeasurement(f"{name}={v} outside [{lo}, {hi}] dBm")
        return self


@dataclass(frozen=True)
class RlcConfig:
    mode: RlcMode = RlcMode.UM
    sn_field_length_bits: int = 12
    reassembly_timer_ms: int = 35

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", RlcMode(self.mode))
        if self.sn_field_length_bits not in (6, 12, 18):
            raise InvalidXrbConfig(f"SN field length {self.sn_field_length_bits} not in (6, 12, 18)")
        if self.reassembly_timer_ms < 0:
            raise InvalidXrbConfig("reassembly timer must be >= 0")


@dataclass(frozen=True)
class XrbConfig:
    xrb_id: int
    rsrp_threshold_dbm: float = -110.0
    min_multicast_ues: int = 2
    unicast_rlc: RlcConfig = RlcConfig(RlcMode.AM)
    multicast_rlc: RlcConfig = RlcConfig(RlcMode.UM)
    dtch_logical_channel_id: int = 4
    xtch_logical_channel_id: int = 5
    report_staleness_us: int = 200_000
    use_csi_rsrp: bool = False
    payload_bits: int = DEFAULT_PAYLOAD_BITS

    def __post_init__(self) -> None:
        if self.min_multicast_ues < 1:
            raise InvalidXrbConfig("min_multicast_ues must be >= 1")
        if self.dtch_logical_channel_id == self.xtch_logical_channel_id:
            raise InvalidXrbConfig("DTCH and XTCH need distinct logical channel ids")
        if self.report_staleness_us < 0:
            raise InvalidXrbConfig("report_staleness_us must be >= 0")
        if self.multicast_rlc.mode is RlcMode.AM:
            raise InvalidRlcMode("XTCH has no feedback path; AM is not allowed")

    def ue_rsrp(self, report: MeasurementReport) -> float:
        if self.use_csi_rsrp and report.csi_rsrp_dbm is not None:
            return report.csi_rsrp_dbm
        return report.ss_rsrp_dbm


@dataclass(frozen=True)
class RlcEntity:
    xrb_id: int
    channel: Channel
    logical_channel_id: int
    config: RlcConfig


@dataclass
class XrbInstance:
    config: XrbConfig
    dtch: RlcEntity
    xtch: RlcEntity | None = None


def _xrb_config_from(raw: XrbConfig | Mapping) -> XrbConfig:
    if isinstance(raw, XrbConfig):
        return raw
    raw = dict(raw)
    for key in ("unicast_rlc", "multicast_rlc"):
        if isinstance(raw.get(key), Mapping):
            raw[key] = RlcConfig(**raw[key])
    try:
        return XrbConfig(**raw)
    except TypeError as exc:
        raise InvalidXrbConfig(str(exc)) from None


class XrbFunction:
    """DU-side XRB switching function: owns RLC entity pairs per XRB."""

    def __init__(self) -> None:
        self.xrbs: dict[int, XrbInstance] = {}

    def configure_xrb(self, rrc_config: XrbConfig | Mapping) -> XrbInstance:
        cfg = _xrb_config_from(rrc_config)
        inst = self.xrbs.get(cfg.xrb_id)
        if inst is None:
            dtch = RlcEntity(cfg.xrb_id, Channel.DTCH, cfg.dtch_logical_channel_id, cfg.unicast_rlc)
            inst = self.xrbs[cfg.xrb_id] = XrbInstance(cfg, dtch)
        else:
            inst.config = cfg
        if inst.xtch is None:
            inst.xtch = RlcEntity(cfg.xrb_id, Channel.XTCH, cfg.xtch_logical_channel_id, cfg.multicast_rlc)
        return inst

    def entities(self) -> list[RlcEntity]:
        out = []
        for xrb_id in sorted(self.xrbs):
            inst = self.xrbs[xrb_id]
            out.append(inst.dtch)
            if inst.xtch is not None:
                out.append(inst.xtch)
        return out


def configure_xrb(function: XrbFunction, rrc_config: XrbConfig | Mapping) -> XrbInstance:
    return function.configure_xrb(rrc_config)


@dataclass(frozen=True)
class SwitchingDecision:
    xrb_id: int
    assignment: dict[int, Channel] = field(hash=False)
    reasons: dict[int, Reason] = field(hash=False)
    ue_mcs: dict[int, int] = field(hash=False)
    estimated_prb_cost_unicast: int = 0
    estimated_prb_cost_multicast: int = 0

    @property
    def gain(self) -> float:
        return self.estimated_prb_cost_unicast / self.estimated_prb_cost_multicast

    @property
    def xtch_ues(self) -> tuple[int, ...]:
        return tuple(u for u in sorted(self.assignment) if self.assignment[u] is Channel.XTCH)

    @property
    def dtch_ues(self) -> tuple[int, ...]:
        return tuple(u for u in sorted(self.assignment) if self.assignment[u] is Channel.DTCH)


def assignment_cost(assignment: Mapping[int, Channel], ue_mcs: Mapping[int, int], payload_bits: int) -> int:
    """Total PRBs: one copy per DTCH UE plus one shared copy at the worst XTCH MCS."""
    cost = sum(prb_cost(ue_mcs[u], payload_bits) for u, ch in assignment.items() if ch is Channel.DTCH)
    xtch = [ue_mcs[u] for u, ch in assignment.items() if ch is Channel.XTCH]
    if xtch:
        cost += prb_cost(min(xtch), payload_bits)
    return cost


def decide_channels(
    ues: Iterable[int],
    reports: Mapping[int, MeasurementReport],
    cfg: XrbConfig,
    now_us: int,
) -> SwitchingDecision:
    ue_list = sorted(set(ues))
    if not ue_list:
        raise EmptyUeSet(f"xrb {cfg.xrb_id}: no interested UEs")
    assignment: dict[int, Channel] = {}
    reasons: dict[int, Reason] = {}
    ue_mcs: dict[int, int] = {}
    candidates = []
    for ue in ue_list:
        rep = reports.get(ue)
        if rep is None or now_us - rep.timestamp_us > cfg.report_staleness_us:
            # unknown radio conditions: robust MCS on the shared channel
            ue_mcs[ue] = 0
            reasons[ue] = Reason.NO_REPORT if rep is None else Reason.STALE_REPORT
            candidates.append(ue)
            continue
        rsrp = cfg.ue_rsrp(rep)
        ue_mcs[ue] = mcs_for_rsrp(rsrp)
        if rsrp < cfg.rsrp_threshold_dbm:
            assignment[ue] = Channel.DTCH
            reasons[ue] = Reason.BELOW_THRESHOLD
        else:
            reasons[ue] = Reason.MEETS_THRESHOLD
            candidates.append(ue)
    gated = len(candidates) < cfg.min_multicast_ues
    for ue in candidates:
        if gated:
            assignment[ue] = Channel.DTCH
            reasons[ue] = Reason.MIN_COUNT_GATE
        else:
            assignment[ue] = Channel.XTCH
    unicast = sum(prb_cost(ue_mcs[u], cfg.payload_bits) for u in ue_list)
    multicast = assignment_cost(assignment, ue_mcs, cfg.payload_bits)
    return SwitchingDecision(cfg.xrb_id, assignment, reasons, ue_mcs, unicast, multicast)


@dataclass(frozen=True)
class PdcpPdu:
    sn: int
    payload: bytes = b""


@dataclass(frozen=True)
class RoutedCopy:
    channel: Channel
    logical_channel_id: int
    ue_ids: tuple[int, ...]
    pdu: PdcpPdu


def route_pdu(
    pdu: PdcpPdu,
    decision: SwitchingDecision,
    targets: Iterable[int] | None = None,
    duplicate_for: Iterable[int] = (),
    cfg: XrbConfig | None = None,
) -> list[RoutedCopy]:
    """Copies to transmit for one PDCP PDU.

    UEs in ``duplicate_for`` receive the PDU on both channels, which the
    receiver's duplicate detection collapses back to one delivery.
    """
    cfg = cfg or XrbConfig(decision.xrb_id)
    target_list = sorted(set(decision.assignment if targets is None else targets))
    missing = [u for u in target_list if u not in decision.assignment]
    if missing:
        raise UndecidedUe(f"no channel decided for UEs {missing}")
    dup = set(duplicate_for)
    xtch_rx = [u for u in target_list if decision.assignment[u] is Channel.XTCH or u in dup]
    dtch_rx = [u for u in target_list if decision.assignment[u] is Channel.DTCH or u in dup]
    out = []
    if xtch_rx:
        out.append(RoutedCopy(Channel.XTCH, cfg.xtch_logical_channel_id, tuple(xtch_rx), pdu))
    for u in dtch_rx:
        out.append(RoutedCopy(Channel.DTCH, cfg.dtch_logical_channel_id, (u,), pdu))
    return out


class DedupVerdict(str, enum.Enum):
    DELIVER = "Deliver"
    DISCARD = "Discard"


@dataclass
class _UeWindow:
    highest: int | None = None
    seen: set[int] = field(default_factory=set)


class PdcpDedupState:
    """Per-UE sliding window of received PDCP sequence numbers."""

    def __init__(self, window_size: int = 4096) -> None:
        if window_size < 1:
            raise ValueError("window_size must be >= 1")
        self.window_size = window_size
        self.windows: dict[int, _UeWindow] = {}

    def init_ue(self, ue_id: int) -> None:
        self.windows.setdefault(ue_id, _UeWindow())

    def highest(self, ue_id: int) -> int | None:
        return self.windows[ue_id].highest

    def check(self, ue_id: int, sn: int) -> DedupVerdict:
        w = self.windows.setdefault(ue_id, _UeWindow())
        if w.highest is not None and sn <= w.highest - self.window_size:
            # below the window: nothing remembered, treat as new
            return DedupVerdict.DELIVER
        if sn in w.seen:
            return DedupVerdict.DISCARD
        w.seen.add(sn)
        if w.highest is None or sn > w.highest:
            w.highest = sn
            floor = sn - self.window_size
            if len(w.seen) > 2 * self.window_size:
                w.seen = {s for s in w.seen if s > floor}
        return DedupVerdict.DELIVER


def pdcp_dedup(state: PdcpDedupState, ue_id: int, sequence_number: int) -> DedupVerdict:
    return state.check(ue_id, sequence_number)
