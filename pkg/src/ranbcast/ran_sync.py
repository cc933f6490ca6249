"""RAN-SYNC: Time-to-Air stamped encapsulation for SFN delivery.

The master CU (MC role) negotiates one :class:`SyncParams` with every
participant, then stamps each payload chunk with the next sync-period
boundary that is guaranteed reachable by all DUs (``now + headroom``).
Each DU buffers on-time PDUs and radiates them at their TTA; any doubt
about a period's completeness mutes that period at that DU, so a DU
either sends exactly what its SFN peers send or stays silent.

Wire form of a PDU (big endian)::

    sync_sequence  u32
    packet_number  u64
    tta_us         u64
    elapsed_octets u64
    payload_len    u32
    payload        payload_len octets

A PDU with an empty payload is the period-end marker: the sender emits it
for every period that carried data, at ``tta - headroom``, carrying the
period's final octet count. Data chunks are never empty.
"""

from __future__ import annotations

import bisect
import hashlib
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import SchemaError, SequenceMismatch, UnreachableParticipant
from .topology import FRAME_US, CuRole, InterfaceKind, Link, Topology, node_kind

_HEADER = struct.Struct(">IQQQI")


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


@dataclass(frozen=True)
class SyncParams:
    sync_period_ms: int
    sync_sequence: int
    epoch_us: int
    headroom_us: int = 0

    def __post_init__(self) -> None:
        if self.sync_period_ms <= 0:
            raise SchemaError("sync_period_ms must be > 0")

    @property
    def period_us(self) -> int:
        return self.sync_period_ms * 1000

    def period_of(self, tta_us: int) -> int:
        return (tta_us - self.epoch_us) // self.period_us

    def boundary(self, period: int) -> int:
        return self.epoch_us + period * self.period_us

    def next_boundary_after(self, t_us: int) -> int:
        """Smallest period boundary strictly later than ``t_us`` (never before the epoch)."""
        if t_us < self.epoch_us:
            return self.epoch_us
        return self.boundary((t_us - self.epoch_us) // self.period_us + 1)

    def is_aligned(self, tta_us: int) -> bool:
        return (tta_us - self.epoch_us) % self.period_us == 0


@dataclass(frozen=True)
class SyncPdu:
    sync_sequence: int
    packet_number: int
    tta_us: int
    elapsed_octets: int
    payload: bytes = b""

    @property
    def is_period_end(self) -> bool:
        return not self.payload

    @property
    def length(self) -> int:
        return len(self.payload)

    @property
    def content_hash(self) -> str:
        return content_hash(self.payload)

    def to_bytes(self) -> bytes:
        return _HEADER.pack(
            self.sync_sequence, self.packet_number, self.tta_us, self.elapsed_octets, len(self.payload)
        ) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> SyncPdu:
        if len(data) < _HEADER.size:
            raise SchemaError(f"SYNC PDU truncated: {len(data)} < {_HEADER.size} octets")
        seq, num, tta, elapsed, n = _HEADER.unpack_from(data)
        payload = data[_HEADER.size:]
        if len(payload) != n:
            raise SchemaError(f"SYNC PDU payload length {len(payload)} != header {n}")
        return cls(seq, num, tta, elapsed, bytes(payload))


# -- negotiation ---------------------------------------------------------


def _cu_id(node: str) -> int:
    return int(node.split(":", 1)[1])


def _path_latency(path: Sequence[Link]) -> int:
    return sum(l.latency_us + l.jitter_us for l in path)


def _route(t: Topology, master: str, target: str, direct: InterfaceKind, via_xn: InterfaceKind) -> list[Link] | None:
    """Direct link of kind ``direct`` or one Xn hop to the target's parent CU first."""
    if node_kind(target) == "cu":
        link = t.link(master, target, via_xn)
        return [link] if link else None
    link = t.link(master, target, direct)
    if link:
        return [link]
    parent = f"cu:{t.cu_of_du(_cu_id(target))}"
    if parent == master:
        return None
    hop = t.link(master, parent, via_xn)
    last = t.link(parent, target, direct)
    return [hop, last] if hop and last else None


@dataclass(frozen=True)
class SyncSetup:
    """Outcome of SFN parameter negotiation."""

    master: str
    params: SyncParams
    participants: tuple[str, ...]
    control_paths: dict[str, list[Link]] = field(hash=False)
    data_paths: dict[str, list[Link]] = field(hash=False)

    @property
    def dus(self) -> tuple[str, ...]:
        return tuple(p for p in self.participants if node_kind(p) == "du")


def negotiate_sync_params(
    t: Topology,
    master_cu: int,
    participants: Iterable[str | int],
    sync_period_ms: int,
    sync_sequence: int,
    now_us: int,
) -> SyncSetup:
    """Agree one SyncParams between the master CU and every participant.

    Integer participants are DU ids. Control traffic goes over F1-M (or
    Xn-C then F1-M for DUs under another CU); SYNC PDUs over F1-U (or
    Xn-U then F1-U). The epoch is the first frame boundary no earlier than
    ``now + max one-way control latency``; the TTA headroom is the worst
    data-path latency including jitter.
    """
    master = f"cu:{master_cu}"
    cu = t.cus.get(master_cu)
    if cu is None or CuRole.MC not in cu.roles:
        raise SchemaError(f"{master} cannot master an SFN without the MC role")
    if sync_period_ms * 1000 % FRAME_US:
        raise SchemaError(f"sync period {sync_period_ms} ms is not a whole number of 10 ms frames")
    nodes = sorted({p if isinstance(p, str) else f"du:{p}" for p in participants})
    control: dict[str, list[Link]] = {}
    data: dict[str, list[Link]] = {}
    for node in nodes:
        if node == master:
            continue
        c = _route(t, master, node, InterfaceKind.F1M, InterfaceKind.XnC)
        if c is None:
            raise UnreachableParticipant(f"{node} has no F1-M/Xn-C path from {master}")
        control[node] = c
        if node_kind(node) == "du":
            d = _route(t, master, node, InterfaceKind.F1U, InterfaceKind.XnU)
            if d is None:
                raise UnreachableParticipant(f"{node} has no F1-U/Xn-U path from {master}")
            data[node] = d
    max_control = max((sum(l.latency_us for l in p) for p in control.values()), default=0)
    headroom = max((_path_latency(p) for p in data.values()), default=0)
    start = now_us + max_control
    epoch = -(-start // FRAME_US) * FRAME_US
    params = SyncParams(sync_period_ms, sync_sequence, epoch, headroom)
    return SyncSetup(master, params, tuple(n for n in nodes if n != master), control, data)


# -- sender --------------------------------------------------------------


def encapsulate(
    chunks: Iterable[bytes],
    params: SyncParams,
    now_us: int,
    *,
    first_packet_number: int = 1,
    elapsed_octets: int = 0,
) -> list[SyncPdu]:
    """Stamp payload chunks with the next period boundary after ``now + headroom``."""
    tta = params.next_boundary_after(now_us + params.headroom_us)
    out = []
    number, elapsed = first_packet_number, elapsed_octets
    for chunk in chunks:
        chunk = bytes(chunk)
        if not chunk:
            raise ValueError("empty payload chunks are reserved for period-end markers")
        out.append(SyncPdu(params.sync_sequence, number, tta, elapsed, chunk))
        number += 1
        elapsed += len(chunk)
    return out


class SyncSender:
    """Master-side encapsulation state for one SYNC sequence."""

    def __init__(self, params: SyncParams) -> None:
        self.params = params
        self.next_packet_number = 1
        self.elapsed_octets = 0
        self.open_periods: list[int] = []  # TTAs with data but no end marker yet

    def encapsulate(self, chunks: Iterable[bytes], now_us: int) -> list[SyncPdu]:
        pdus = encapsulate(
            chunks, self.params, now_us,
            first_packet_number=self.next_packet_number, elapsed_octets=self.elapsed_octets,
        )
        if pdus:
            last = pdus[-1]
            self.next_packet_number = last.packet_number + 1
            self.elapsed_octets = last.elapsed_octets + last.length
            if last.tta_us not in self.open_periods:
                self.open_periods.append(last.tta_us)
        return pdus

    def close_time(self, tta_us: int) -> int:
        """Latest send time at which the end marker still reaches every DU on time."""
        return tta_us - self.params.headroom_us

    def close_period(self, tta_us: int) -> SyncPdu:
        self.open_periods.remove(tta_us)
        marker = SyncPdu(self.params.sync_sequence, self.next_packet_number, tta_us, self.elapsed_octets)
        self.next_packet_number += 1
        return marker


# -- receiver ------------------------------------------------------------


@dataclass(frozen=True)
class SyncEmission:
    du_id: int
    sync_sequence: int
    period: int
    packet_number: int | None
    time_us: int
    content_hash: str
    octets: int
    muted: bool


@dataclass(frozen=True)
class Gap:
    missing: tuple[int, ...]
    octets: int
    periods: tuple[int, ...]


@dataclass(frozen=True)
class LossReport:
    gaps: tuple[Gap, ...] = ()
    newly_muted: tuple[int, ...] = ()
    # Candidate periods that had already been radiated when the gap surfaced.
    already_emitted: tuple[int, ...] = ()

    @property
    def missing_octets(self) -> int:
        return sum(g.octets for g in self.gaps)

    def __bool__(self) -> bool:
        return bool(self.gaps)


class SyncReceiver:
    """Per-DU buffering, loss detection and emission.

    With ``strict=True`` a period is only radiated once its end marker
    has arrived on time; the harness runs receivers strict, unit tests
    without markers use the default.
    """

    def __init__(self, du_id: int, params: SyncParams, clock_offset_us: int = 0, *, strict: bool = False) -> None:
        self.du_id = du_id
        self.params = params
        self.clock_offset_us = clock_offset_us
        self.strict = strict
        self.buffer: dict[int, dict[int, SyncPdu]] = {}  # period -> packet_number -> pdu
        self.received: dict[int, SyncPdu] = {}
        self.next_expected = 1
        self.mute_periods: set[int] = set()
        # Mutes that can no longer be lifted: late arrivals and closed periods.
        # Gap mutes on open periods are recomputed on every check because a
        # reordered PDU may still fill the gap before its TTA.
        self._fixed_mutes: set[int] = set()
        self.closed_periods: set[int] = set()
        self.emitted: set[int] = set()
        self.late: list[tuple[int, int]] = []  # (packet_number, arrival_us)
        self._on_time_markers: set[int] = set()
        self._open_periods: set[int] = set()
        # Sorted packet numbers; gaps ending before the cursor only touch
        # closed periods and are kept in _settled keyed by their upper number.
        self._numbers: list[int] = []
        self._cursor = 0
        self._settled: dict[int, Gap] = {}

    def ingest(self, pdu: SyncPdu, arrival_us: int) -> SyncReceiver:
        if pdu.sync_sequence != self.params.sync_sequence:
            raise SequenceMismatch(
                f"du:{self.du_id} expects sequence {self.params.sync_sequence}, got {pdu.sync_sequence}"
            )
        if not self.params.is_aligned(pdu.tta_us):
            raise SchemaError(f"TTA {pdu.tta_us} is not on a sync period boundary")
        n = pdu.packet_number
        if n in self.received:
            return self
        self.received[n] = pdu
        i = bisect.bisect_left(self._numbers, n)
        self._numbers.insert(i, n)
        if i < self._cursor:
            self._cursor = i
            self._settled = {k: g for k, g in self._settled.items() if k < n}
        while self.next_expected in self.received:
            self.next_expected += 1
        period = self.params.period_of(pdu.tta_us)
        if arrival_us > pdu.tta_us or period in self.closed_periods:
            self.late.append((n, arrival_us))
            self._fixed_mutes.add(period)
            self.mute_periods.add(period)
            if period not in self.closed_periods:
                self._open_periods.add(period)
        elif pdu.is_period_end:
            self._on_time_markers.add(period)
            self._open_periods.add(period)
        else:
            self.buffer.setdefault(period, {})[n] = pdu
            self._open_periods.add(period)
        return self

    def detect_loss(self) -> LossReport:
        """Report packet-number gaps and mute every open period that may have lost content."""
        nums = self._numbers
        live: list[tuple[int, Gap]] = []
        current: set[int] = set()
        stale: set[int] = set()
        for i in range(self._cursor, len(nums)):
            prev = nums[i - 1] if i else 0
            if nums[i] == prev + 1:
                continue
            a = self.received[prev] if i else None
            gap = self._gap(a, self.received[nums[i]], tuple(range(prev + 1, nums[i])))
            live.append((i, gap))
            for p in gap.periods:
                if p in self.closed_periods:
                    stale.add(p)
                else:
                    current.add(p)
        muted = current - self.mute_periods
        self.mute_periods = self._fixed_mutes | current
        cursor = self._cursor
        while cursor < len(nums) and self.params.period_of(self.received[nums[cursor]].tta_us) in self.closed_periods:
            cursor += 1
        for i, gap in live:
            if i < cursor:
                self._settled[nums[i]] = gap
        self._cursor = cursor
        gaps = [self._settled[k] for k in sorted(self._settled)] + [g for i, g in live if i >= cursor]
        return LossReport(tuple(gaps), tuple(sorted(muted)), tuple(sorted(stale)))

    def _gap(self, a: SyncPdu | None, b: SyncPdu, missing: tuple[int, ...]) -> Gap:
        octets = b.elapsed_octets - (a.elapsed_octets + a.length if a else 0)
        if octets <= 0:
            return Gap(missing, 0, ())
        hi = self.params.period_of(b.tta_us)
        if a is None:
            lo = hi
        else:
            lo = self.params.period_of(a.tta_us) + (1 if a.is_period_end else 0)
        return Gap(missing, octets, tuple(range(lo, hi + 1)))

    def emit_due(self, now_us: int) -> list[SyncEmission]:
        """Radiate, exactly once, every buffered PDU whose TTA has come.

        Muted periods yield records with ``muted=True`` so the emission
        log shows them; those PDUs are never transmitted.
        """
        self.detect_loss()
        due = sorted(p for p in self._open_periods if self.params.boundary(p) <= now_us)
        out: list[SyncEmission] = []
        for period in due:
            if self.strict and period not in self._on_time_markers:
                self.mute_periods.add(period)
            muted = period in self.mute_periods
            if muted:
                self._fixed_mutes.add(period)
            tta = self.params.boundary(period)
            held = self.buffer.pop(period, {})
            for n in sorted(held):
                pdu = held[n]
                if not muted:
                    self.emitted.add(n)
                out.append(SyncEmission(
                    self.du_id, self.params.sync_sequence, period, n,
                    tta + self.clock_offset_us, pdu.content_hash, pdu.length, muted,
                ))
            if muted and not held:
                out.append(SyncEmission(
                    self.du_id, self.params.sync_sequence, period, None,
                    tta + self.clock_offset_us, "", 0, True,
                ))
            self.closed_periods.add(period)
            self._open_periods.discard(period)
        return out


SyncReceiverState = SyncReceiver


def ingest_pdu(state: SyncReceiver, pdu: SyncPdu, arrival_us: int) -> SyncReceiver:
    return state.ingest(pdu, arrival_us)


def emit_due(state: SyncReceiver, now_us: int) -> list[SyncEmission]:
    return state.emit_due(now_us)


def detect_loss(state: SyncReceiver) -> LossReport:
    return state.detect_loss()
