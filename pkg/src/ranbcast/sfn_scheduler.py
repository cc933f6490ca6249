"""Per-cell frame construction and SFN alignment checking.

A frame is a (slot x PRB) ownership grid. Broadcast services take exactly
the PRBs admission gave them; unicast demand is packed greedily into PRBs
that no RBMA window reserves in that slot; whatever is left is Empty.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from .errors import AllocationConflict, PreconditionNotMet
from .ran_sync import SyncEmission
from .rbma import PrbRange, RbmaMode, RbmaRegistry
from .topology import FRAME_US

UNICAST = "Unicast"
EMPTY = "Empty"


@dataclass(frozen=True)
class FrameAllocation:
    slot: int
    prbs: PrbRange
    owner: str  # service id, UNICAST or EMPTY
    content_hash: str = ""


@dataclass(frozen=True)
class Frame:
    cell_id: int
    frame_number: int
    slots_per_frame: int
    bandwidth_prbs: int
    allocations: tuple[FrameAllocation, ...]
    duration_us: int = FRAME_US

    def owner_counts(self) -> Counter:
        """PRB-slot count per owner class: broadcast, unicast or empty."""
        counts: Counter = Counter()
        for a in self.allocations:
            kind = a.owner if a.owner in (UNICAST, EMPTY) else "broadcast"
            counts[kind] += a.prbs.width
        return counts

    def service_allocations(self, service_id: str) -> list[FrameAllocation]:
        return [a for a in self.allocations if a.owner == service_id]

    def dump(self) -> str:
        lines = []
        for a in self.allocations:
            lines.append(
                f"frame={self.frame_number} cell={self.cell_id} slot={a.slot} "
                f"prb={a.prbs.start}-{a.prbs.end} owner={a.owner} hash={a.content_hash or '-'}"
            )
        return "\n".join(lines)


def _runs(owners: list[str], hashes: Mapping[str, str], slot: int) -> list[FrameAllocation]:
    out = []
    start = 0
    for p in range(1, len(owners) + 1):
        if p == len(owners) or owners[p] != owners[start]:
            o = owners[start]
            out.append(FrameAllocation(slot, PrbRange(start, p - 1), o, hashes.get(o, "")))
            start = p
    return out


def build_frame(
    registry: RbmaRegistry,
    cell_id: int,
    frame_number: int,
    unicast_demand: int | Mapping[int, int] = 0,
    content_hashes: Mapping[str, str] | None = None,
    services: Iterable[str] | None = None,
) -> Frame:
    """Lay out one 10 ms frame of ``cell_id``.

    ``unicast_demand`` is PRBs requested per slot (a constant or a slot map);
    ``content_hashes`` maps SFN service ids to the hash of the content they
    radiate in this frame.
    """
    t = registry.topology
    cell = t.cell(cell_id)
    n_slots = t.slots_per_frame(cell_id)
    grid: list[list[str | None]] = [[None] * cell.bandwidth_prbs for _ in range(n_slots)]
    hashes = dict(content_hashes or {})
    wanted = set(registry.services) if services is None else set(services)

    for sid in sorted(wanted):
        alloc = registry.allocation_of(sid).get(cell_id, {})
        for slot, ranges in sorted(alloc.items()):
            row = grid[slot]
            for r in ranges:
                for p in range(r.start, r.end + 1):
                    if row[p] is not None:
                        raise AllocationConflict(
                            f"cell {cell_id} slot {slot} PRB {p}: {sid} collides with {row[p]}"
                        )
                    row[p] = sid

    reserved = [[False] * cell.bandwidth_prbs for _ in range(n_slots)]
    for rbma in registry.rbmas_for_cell(cell_id):
        w = rbma.windows.get(cell_id)
        if w is None:
            continue
        for slot in w.slot_pattern:
            for p in range(w.prb_start, w.prb_end + 1):
                reserved[slot][p] = True

    for slot in range(n_slots):
        need = unicast_demand.get(slot, 0) if isinstance(unicast_demand, Mapping) else unicast_demand
        row = grid[slot]
        for p in range(cell.bandwidth_prbs):
            if need <= 0:
                break
            if row[p] is None and not reserved[slot][p]:
                row[p] = UNICAST
                need -= 1

    allocations: list[FrameAllocation] = []
    for slot, row in enumerate(grid):
        allocations.extend(_runs([o if o is not None else EMPTY for o in row], hashes, slot))
    return Frame(cell_id, frame_number, n_slots, cell.bandwidth_prbs, tuple(allocations))


def check_grid_exclusive(frame: Frame) -> None:
    """Re-derive the grid from the allocation list; raise on any double booking or hole."""
    seen: dict[tuple[int, int], str] = {}
    for a in frame.allocations:
        for p in range(a.prbs.start, a.prbs.end + 1):
            key = (a.slot, p)
            if key in seen:
                raise AllocationConflict(f"cell {frame.cell_id} slot {a.slot} PRB {p} owned twice")
            seen[key] = a.owner
    if len(seen) != frame.slots_per_frame * frame.bandwidth_prbs:
        raise AllocationConflict(f"cell {frame.cell_id} frame {frame.frame_number} grid not fully covered")


# -- transmission events ---------------------------------------------------


@dataclass(frozen=True)
class TransmissionEvent:
    cell_id: int
    period: int
    time_us: int
    slot: int
    prbs: tuple[PrbRange, ...]
    content_hash: str
    muted: bool = False
    service_id: str = ""


def period_hash(emissions: Iterable[SyncEmission]) -> str:
    """Hash of a period's content: the per-PDU hashes in packet-number order."""
    h = hashlib.sha256()
    for e in sorted(emissions, key=lambda e: e.packet_number or 0):
        h.update(e.content_hash.encode())
        h.update(b"\0")
    return h.hexdigest()[:16]


def transmission_events(
    registry: RbmaRegistry,
    service_id: str,
    emissions_by_du: Mapping[int, Iterable[SyncEmission]],
) -> list[TransmissionEvent]:
    """One event per (member cell, period): the first allocated slot of the period's frame.

    ``emission.time_us`` already includes the DU clock offset.
    """
    t = registry.topology
    alloc = registry.allocation_of(service_id)
    out = []
    for cell_id in sorted(alloc):
        per_slot = alloc[cell_id]
        if not per_slot:
            continue
        slot = min(per_slot)
        prbs = tuple(per_slot[slot])
        by_period: dict[int, list[SyncEmission]] = {}
        for e in emissions_by_du.get(t.du_of_cell(cell_id), ()):
            by_period.setdefault(e.period, []).append(e)
        offset = slot * t.slot_duration_us(cell_id)
        for period, group in sorted(by_period.items()):
            muted = any(e.muted for e in group)
            out.append(TransmissionEvent(
                cell_id, period, min(e.time_us for e in group) + offset, slot, prbs,
                "" if muted else period_hash(group), muted, service_id,
            ))
    return out


@dataclass(frozen=True)
class Aligned:
    cells: tuple[int, ...]
    muted_cells: tuple[int, ...] = ()
    silent_cells: tuple[int, ...] = ()

    aligned = True


@dataclass(frozen=True)
class Misaligned:
    deviating_cells: tuple[int, ...]
    details: tuple[str, ...] = field(default=())
    muted_cells: tuple[int, ...] = ()

    aligned = False


AlignmentVerdict = Union[Aligned, Misaligned]


def check_sfn_alignment(
    events: Iterable[TransmissionEvent],
    rbma=None,
    tolerance_us: int = 0,
) -> AlignmentVerdict:
    """Compare every non-muted member cell against the majority transmission.

    Events must all belong to one period. With ``rbma`` given, only its
    member cells count and members without any event are reported silent.
    """
    events = list(events)
    if rbma is not None:
        if rbma.mode is not RbmaMode.SFN:
            raise PreconditionNotMet(f"RBMA {rbma.rbma_id} is not an SFN area")
        members = set(rbma.cell_ids)
        events = [e for e in events if e.cell_id in members]
    else:
        members = {e.cell_id for e in events}
    muted = tuple(sorted({e.cell_id for e in events if e.muted}))
    live = sorted((e for e in events if not e.muted), key=lambda e: e.cell_id)
    silent = tuple(sorted(members - {e.cell_id for e in events}))
    if not live:
        return Aligned((), muted, silent)

    def signature(e: TransmissionEvent):
        return (e.time_us, e.slot, e.prbs, e.content_hash)

    counts = Counter(signature(e) for e in live)
    first_cell = {}
    for e in live:
        first_cell.setdefault(signature(e), e.cell_id)
    ref = min(counts, key=lambda s: (-counts[s], first_cell[s]))
    deviating, details = [], []
    for e in live:
        problems = []
        if abs(e.time_us - ref[0]) > tolerance_us:
            problems.append(f"time {e.time_us} vs {ref[0]} (tolerance {tolerance_us} us)")
        if e.slot != ref[1] or e.prbs != ref[2]:
            problems.append("resources differ")
        if e.content_hash != ref[3]:
            problems.append("content differs")
        if problems:
            deviating.append(e.cell_id)
            details.append(f"cell {e.cell_id}: " + ", ".join(problems))
    if deviating:
        return Misaligned(tuple(deviating), tuple(details), muted)
    return Aligned(tuple(e.cell_id for e in live), muted, silent)


# -- reporting -------------------------------------------------------------


@dataclass(frozen=True)
class CellUtilization:
    cell_id: int
    broadcast: int
    unicast: int
    empty: int

    @property
    def total(self) -> int:
        return self.broadcast + self.unicast + self.empty

    def fractions(self) -> tuple[float, float, float]:
        n = self.total
        return (self.broadcast / n, self.unicast / n, self.empty / n) if n else (0.0, 0.0, 1.0)


def multiplex_report(frames: Iterable[Frame], registry: RbmaRegistry | None = None) -> dict:
    per_cell: dict[int, Counter] = {}
    for f in frames:
        per_cell.setdefault(f.cell_id, Counter()).update(f.owner_counts())
    cells = {}
    for cid in sorted(per_cell):
        c = per_cell[cid]
        u = CellUtilization(cid, c["broadcast"], c[UNICAST], c[EMPTY])
        b, un, e = u.fractions()
        cells[cid] = {
            "broadcast_prb_slots": u.broadcast, "unicast_prb_slots": u.unicast, "empty_prb_slots": u.empty,
            "broadcast": b, "unicast": un, "empty": e,
        }
    out: dict = {"cells": cells}
    if registry is not None:
        out["tdm"] = {cid: registry.tdm_layout(cid) for cid in sorted(per_cell)}
    return out
