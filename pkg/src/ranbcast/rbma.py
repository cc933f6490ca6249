"""RAN Broadcast/Multicast Areas: registry, admission control and reuse-3 planning.

An RBMA is a set of cells plus the time/frequency window reserved on each
of them. Services are admitted into an RBMA first-fit from the low-PRB end
of each cell's window; every (cell, slot) keeps an explicit PRB ownership
map so overbooking is impossible by construction and re-checked after
every change.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from .errors import (
    CarrierMismatch,
    CyclicComposite,
    DuplicateId,
    InvalidComposite,
    InvalidLink,
    InvalidWindow,
    IsdViolation,
    NotThreeColorable,
    OverlappingReservation,
    RuntimeInvariantViolation,
    SchemaError,
    UnknownRbma,
    UnknownService,
)
from .topology import CuRole, InterfaceKind, Topology, max_isd_for_numerology, neighbor_cells

MAX_MCS_INDEX = 28


class RbmaMode(str, enum.Enum):
    SINGLE_CELL = "SingleCell"
    SFN = "Sfn"
    COMPOSITE = "Composite"


@dataclass(frozen=True, order=True)
class PrbRange:
    start: int
    end: int  # inclusive

    @property
    def width(self) -> int:
        return self.end - self.start + 1

    def __str__(self) -> str:
        return f"{self.start}-{self.end}"


def ranges_from_prbs(prbs: Iterable[int]) -> tuple[PrbRange, ...]:
    out: list[PrbRange] = []
    for p in sorted(prbs):
        if out and out[-1].end == p - 1:
            out[-1] = PrbRange(out[-1].start, p)
        else:
            out.append(PrbRange(p, p))
    return tuple(out)


@dataclass(frozen=True)
class ResourceWindow:
    """Reserved slots of the 10 ms frame times an inclusive PRB range."""

    slot_pattern: frozenset[int]
    prb_start: int
    prb_end: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "slot_pattern", frozenset(self.slot_pattern))

    @property
    def width(self) -> int:
        return self.prb_end - self.prb_start + 1

    @property
    def prbs(self) -> PrbRange:
        return PrbRange(self.prb_start, self.prb_end)

    @property
    def capacity(self) -> int:
        return self.width * len(self.slot_pattern)

    def overlaps(self, other: ResourceWindow) -> bool:
        if not (self.slot_pattern & other.slot_pattern):
            return False
        return self.prb_start <= other.prb_end and other.prb_start <= self.prb_end

    def with_slots(self, slots: Iterable[int]) -> ResourceWindow:
        return ResourceWindow(frozenset(slots), self.prb_start, self.prb_end)


@dataclass(frozen=True)
class RbmaSpec:
    rbma_id: int
    mode: RbmaMode
    cells: tuple[int, ...] = ()
    # A single window applies to every member cell; a mapping sets them per cell.
    windows: ResourceWindow | Mapping[int, ResourceWindow] | None = None
    carriers: Mapping[int, int] | None = None
    constituents: tuple[int, ...] = ()
    slice_tag: str | None = None
    master_cu: int | None = None


@dataclass(frozen=True)
class Rbma:
    rbma_id: int
    mode: RbmaMode
    member_cells: tuple[tuple[int, int], ...]  # (cell_id, carrier), sorted
    windows: Mapping[int, ResourceWindow]
    constituents: tuple[int, ...] = ()
    slice_tag: str | None = None
    master_cu: int | None = None

    @property
    def sync_required(self) -> bool:
        return self.mode is RbmaMode.SFN

    @property
    def cell_ids(self) -> tuple[int, ...]:
        return tuple(c for c, _ in self.member_cells)

    @property
    def carriers(self) -> tuple[int, ...]:
        return tuple(sorted({car for _, car in self.member_cells}))


@dataclass(frozen=True)
class ServiceConfig:
    service_id: str
    rbma_id: int
    mcs_index: int
    required_prbs: int
    data_rate_kbps: float = 0.0
    priority: int = 0
    slot_pattern: frozenset[int] | None = None

    def __post_init__(self) -> None:
        if self.required_prbs <= 0:
            raise SchemaError(f"service {self.service_id}: required_prbs must be > 0")
        if not 0 <= self.mcs_index <= MAX_MCS_INDEX:
            raise SchemaError(f"service {self.service_id}: mcs_index {self.mcs_index} outside 0..{MAX_MCS_INDEX}")
        if self.slot_pattern is not None:
            object.__setattr__(self, "slot_pattern", frozenset(self.slot_pattern))


Allocation = dict[int, dict[int, tuple[PrbRange, ...]]]  # cell -> slot -> ranges


@dataclass(frozen=True)
class Admitted:
    service_id: str
    allocation: Allocation

    admitted = True


@dataclass(frozen=True)
class Rejected:
    service_id: str
    cell_id: int
    reason: str
    slot: int | None = None

    admitted = False


AdmissionResult = Union[Admitted, Rejected]


def spacing_km(t: Topology, cells: Iterable[int]) -> float:
    """Largest distance between any two member sites (0 for fewer than two)."""
    pos = [t.cell(c).position for c in cells]
    return max((math.dist(p, q) for i, p in enumerate(pos) for q in pos[i + 1:]), default=0.0)


@dataclass
class _ServiceRecord:
    config: ServiceConfig
    allocation: Allocation


class RbmaRegistry:
    """Single-writer registry of RBMAs and the services admitted into them."""

    def __init__(self, topology: Topology) -> None:
        self.topology = topology
        self._rbmas: dict[int, Rbma] = {}
        self._services: dict[str, _ServiceRecord] = {}
        # (cell, slot) -> per-PRB owner (service id) or None
        self._grid: dict[tuple[int, int], list[str | None]] = {}

    # -- areas ----------------------------------------------------------

    def __contains__(self, rbma_id: int) -> bool:
        return rbma_id in self._rbmas

    def __iter__(self):
        return iter(sorted(self._rbmas))

    def get(self, rbma_id: int) -> Rbma:
        try:
            return self._rbmas[rbma_id]
        except KeyError:
            raise UnknownRbma(f"RBMA {rbma_id} is not registered") from None

    @property
    def rbmas(self) -> list[Rbma]:
        return [self._rbmas[k] for k in sorted(self._rbmas)]

    def create_rbma(self, spec: RbmaSpec) -> Rbma:
        """Validate and register an RBMA.

        Raises ``IsdViolation``, ``CarrierMismatch``, ``OverlappingReservation``,
        ``InvalidWindow``, ``CyclicComposite``, ``InvalidComposite``,
        ``UnknownRbma`` or ``DuplicateId``.
        """
        if spec.rbma_id in self._rbmas:
            raise DuplicateId(f"RBMA {spec.rbma_id} already registered")
        mode = RbmaMode(spec.mode)
        if mode is RbmaMode.COMPOSITE:
            rbma = self._build_composite(spec)
        else:
            rbma = self._build_area(spec, mode)
        self._rbmas[rbma.rbma_id] = rbma
        return rbma

    def _build_composite(self, spec: RbmaSpec) -> Rbma:
        if not spec.constituents:
            raise InvalidComposite(f"composite RBMA {spec.rbma_id} has no constituents")
        if spec.rbma_id in spec.constituents:
            raise CyclicComposite(f"composite RBMA {spec.rbma_id} contains itself")
        seen: dict[int, int] = {}
        members: list[tuple[int, int]] = []
        for cid in spec.constituents:
            part = self.get(cid)
            if part.mode is RbmaMode.COMPOSITE:
                raise InvalidComposite(
                    f"composite RBMA {spec.rbma_id}: constituent {cid} is itself composite"
                )
            for cell, carrier in part.member_cells:
                if cell in seen:
                    raise InvalidComposite(
                        f"cell {cell} appears in constituents {seen[cell]} and {cid}"
                    )
                seen[cell] = cid
                members.append((cell, carrier))
        return Rbma(
            rbma_id=spec.rbma_id,
            mode=RbmaMode.COMPOSITE,
            member_cells=tuple(sorted(members)),
            windows={},
            constituents=tuple(sorted(set(spec.constituents))),
            slice_tag=spec.slice_tag,
        )

    def _build_area(self, spec: RbmaSpec, mode: RbmaMode) -> Rbma:
        t = self.topology
        cells = tuple(sorted(set(spec.cells)))
        if not cells:
            raise SchemaError(f"RBMA {spec.rbma_id} lists no cells")
        if mode is RbmaMode.SINGLE_CELL and len(cells) != 1:
            raise SchemaError(f"single-cell RBMA {spec.rbma_id} lists {len(cells)} cells")
        for c in cells:
            t.cell(c)
            du = t.du_of_cell(c)
            if not t.control_connected(du):
                raise InvalidLink(f"du:{du} (cell {c}) has no F1-C path to a CU-CP")

        members = []
        for c in cells:
            carrier = t.cell(c).carrier
            if spec.carriers and c in spec.carriers and spec.carriers[c] != carrier:
                raise CarrierMismatch(
                    f"cell {c} operates carrier {carrier}, RBMA asked for {spec.carriers[c]}"
                )
            members.append((c, carrier))

        master = None
        if mode is RbmaMode.SFN:
            carriers = {car for _, car in members}
            if len(carriers) != 1:
                raise CarrierMismatch(f"SFN RBMA {spec.rbma_id} spans carriers {sorted(carriers)}")
            mus = {t.cell(c).numerology_mu for c in cells}
            if len(mus) != 1:
                raise CarrierMismatch(f"SFN RBMA {spec.rbma_id} mixes numerologies {sorted(mus)}")
            (mu,) = mus
            limit = max_isd_for_numerology(t, mu)
            spacing = spacing_km(t, cells)
            if spacing > limit:
                raise IsdViolation(
                    f"SFN RBMA {spec.rbma_id}: site spacing {spacing:.3f} km exceeds "
                    f"{limit} km allowed at mu={mu}"
                )
            master = self._master_cu(spec, cells)

        windows = self._resolve_windows(spec, cells)
        if mode is RbmaMode.SFN and windows and len(set(windows.values())) != 1:
            raise InvalidWindow(f"SFN RBMA {spec.rbma_id} needs one identical window on every cell")
        for c, w in windows.items():
            for other in self._rbmas.values():
                ow = other.windows.get(c)
                if ow is not None and ow.overlaps(w):
                    raise OverlappingReservation(
                        f"cell {c}: window of RBMA {spec.rbma_id} overlaps RBMA {other.rbma_id}"
                    )
        return Rbma(
            rbma_id=spec.rbma_id,
            mode=mode,
            member_cells=tuple(members),
            windows=windows,
            slice_tag=spec.slice_tag,
            master_cu=master,
        )

    def _resolve_windows(self, spec: RbmaSpec, cells: tuple[int, ...]) -> dict[int, ResourceWindow]:
        if spec.windows is None:
            return {}
        if isinstance(spec.windows, ResourceWindow):
            windows = {c: spec.windows for c in cells}
        else:
            windows = dict(spec.windows)
            missing = set(cells) - set(windows)
            if missing:
                raise InvalidWindow(f"RBMA {spec.rbma_id}: no window for cells {sorted(missing)}")
        t = self.topology
        for c, w in windows.items():
            cell = t.cell(c)
            n_slots = t.slots_per_frame(c)
            if not (0 <= w.prb_start <= w.prb_end < cell.bandwidth_prbs):
                raise InvalidWindow(
                    f"cell {c}: PRBs {w.prb_start}-{w.prb_end} outside 0-{cell.bandwidth_prbs - 1}"
                )
            if not w.slot_pattern or not all(0 <= s < n_slots for s in w.slot_pattern):
                raise InvalidWindow(f"cell {c}: slot pattern must be a non-empty subset of 0..{n_slots - 1}")
        return windows

    def _master_cu(self, spec: RbmaSpec, cells: tuple[int, ...]) -> int:
        t = self.topology
        if spec.master_cu is not None:
            cu = t.cus.get(spec.master_cu)
            if cu is None or CuRole.MC not in cu.roles:
                raise SchemaError(f"RBMA {spec.rbma_id}: master cu:{spec.master_cu} lacks the MC role")
            return spec.master_cu
        candidates = set()
        for c in cells:
            du = t.du_of_cell(c)
            parent = t.cus[t.cu_of_du(du)]
            if CuRole.MC in parent.roles:
                candidates.add(parent.cu_id)
            for link in t.links_of(f"du:{du}", InterfaceKind.F1M):
                candidates.add(int(link.other(f"du:{du}").split(":")[1]))
        if len(candidates) != 1:
            raise SchemaError(
                f"SFN RBMA {spec.rbma_id}: expected one MC-capable master CU, found {sorted(candidates)}; "
                "set master_cu explicitly"
            )
        return candidates.pop()

    def create_dynamic_rbma(self, cell_id: int) -> Rbma:
        """Register a single-cell RBMA without reserved resources (dynamic scheduling)."""
        new_id = max(self._rbmas, default=0) + 1
        return self.create_rbma(RbmaSpec(new_id, RbmaMode.SINGLE_CELL, (cell_id,)))

    def resolve_rbma(self, rbma_id: int) -> list[tuple[int, int]]:
        """Transmission points of an RBMA as sorted, de-duplicated (du_id, cell_id) pairs."""
        rbma = self.get(rbma_id)
        cells: set[int] = set()
        stack = [(rbma, (rbma_id,))]
        while stack:
            current, path = stack.pop()
            if current.mode is RbmaMode.COMPOSITE:
                for cid in current.constituents:
                    if cid in path:
                        raise CyclicComposite(f"RBMA {cid} reached twice via {path}")
                    stack.append((self.get(cid), path + (cid,)))
            else:
                cells.update(current.cell_ids)
        t = self.topology
        return sorted((t.du_of_cell(c), c) for c in cells)

    def cells_of(self, rbma_id: int) -> set[int]:
        return {c for _, c in self.resolve_rbma(rbma_id)}

    def rbmas_for_cell(self, cell_id: int) -> list[Rbma]:
        return [r for r in self.rbmas if cell_id in r.cell_ids]

    def rbma_for_cell(self, cell_id: int, *, create: bool = True) -> Rbma | None:
        """The area the network hands out for ``cell_id``: the lowest-id non-composite RBMA."""
        for r in self.rbmas:
            if r.mode is not RbmaMode.COMPOSITE and cell_id in r.cell_ids:
                return r
        if create:
            return self.create_dynamic_rbma(cell_id)
        return None

    def window_for(self, rbma_id: int, cell_id: int) -> ResourceWindow | None:
        rbma = self.get(rbma_id)
        if rbma.mode is RbmaMode.COMPOSITE:
            for cid in rbma.constituents:
                part = self.get(cid)
                if cell_id in part.cell_ids:
                    return part.windows.get(cell_id)
            return None
        return rbma.windows.get(cell_id)

    # -- services -------------------------------------------------------

    @property
    def services(self) -> dict[str, ServiceConfig]:
        return {k: r.config for k, r in sorted(self._services.items())}

    def allocation_of(self, service_id: str) -> Allocation:
        try:
            return self._services[service_id].allocation
        except KeyError:
            raise UnknownService(f"service {service_id} is not admitted") from None

    def _owners(self, cell: int, slot: int) -> list[str | None]:
        key = (cell, slot)
        if key not in self._grid:
            self._grid[key] = [None] * self.topology.cell(cell).bandwidth_prbs
        return self._grid[key]

    def admit_service(self, s: ServiceConfig) -> AdmissionResult:
        """First-fit admission across every member cell of ``s.rbma_id``.

        Admitted iff every cell has at least ``required_prbs`` free PRBs
        inside its window in every slot the service uses. The rejection
        names the first failing cell in id order.
        """
        self.get(s.rbma_id)
        if s.service_id in self._services:
            raise DuplicateId(f"service {s.service_id} already admitted")
        plan: Allocation = {}
        for _, cell in sorted(self.resolve_rbma(s.rbma_id), key=lambda p: p[1]):
            window = self.window_for(s.rbma_id, cell)
            if window is None:
                return Rejected(s.service_id, cell, "no reserved resources on this cell")
            slots = s.slot_pattern if s.slot_pattern is not None else window.slot_pattern
            outside = sorted(set(slots) - window.slot_pattern)
            if outside:
                return Rejected(s.service_id, cell, f"slots {outside} outside reserved window", outside[0])
            per_slot: dict[int, tuple[PrbRange, ...]] = {}
            for slot in sorted(slots):
                owners = self._owners(cell, slot)
                free = [p for p in range(window.prb_start, window.prb_end + 1) if owners[p] is None]
                if len(free) < s.required_prbs:
                    return Rejected(
                        s.service_id, cell,
                        f"slot {slot}: {len(free)} free PRBs < {s.required_prbs} required", slot,
                    )
                per_slot[slot] = ranges_from_prbs(free[: s.required_prbs])
            plan[cell] = per_slot

        for cell, per_slot in plan.items():
            for slot, ranges in per_slot.items():
                owners = self._owners(cell, slot)
                for r in ranges:
                    for p in range(r.start, r.end + 1):
                        owners[p] = s.service_id
        self._services[s.service_id] = _ServiceRecord(s, plan)
        self.check_safety()
        return Admitted(s.service_id, plan)

    def release_service(self, service_id: str) -> Allocation:
        record = self._services.pop(service_id, None)
        if record is None:
            raise UnknownService(f"service {service_id} is not admitted")
        for cell, per_slot in record.allocation.items():
            for slot, ranges in per_slot.items():
                owners = self._owners(cell, slot)
                for r in ranges:
                    for p in range(r.start, r.end + 1):
                        if owners[p] != service_id:
                            raise RuntimeInvariantViolation(
                                f"cell {cell} slot {slot} PRB {p} owned by {owners[p]!r}, expected {service_id!r}"
                            )
                        owners[p] = None
        self.check_safety()
        return record.allocation

    def check_safety(self) -> None:
        """Recount demand per (cell, slot, window) from the service records; raise on overbooking."""
        demand: dict[tuple[int, int, ResourceWindow], int] = {}
        per_cell_slot: dict[tuple[int, int], int] = {}
        for rec in self._services.values():
            for cell, per_slot in rec.allocation.items():
                window = self.window_for(rec.config.rbma_id, cell)
                for slot, ranges in per_slot.items():
                    for r in ranges:
                        if window is None or r.start < window.prb_start or r.end > window.prb_end:
                            raise RuntimeInvariantViolation(
                                f"service {rec.config.service_id} allocated outside its window on cell {cell}"
                            )
                    n = sum(r.width for r in ranges)
                    demand[(cell, slot, window)] = demand.get((cell, slot, window), 0) + n
                    per_cell_slot[(cell, slot)] = per_cell_slot.get((cell, slot), 0) + n
        for (cell, slot, window), used in demand.items():
            if used > window.width:
                raise RuntimeInvariantViolation(
                    f"cell {cell} slot {slot}: {used} PRBs admitted > {window.width} reserved"
                )
        for (cell, slot), owners in self._grid.items():
            count = sum(1 for o in owners if o is not None)
            if count != per_cell_slot.get((cell, slot), 0):
                raise RuntimeInvariantViolation(f"cell {cell} slot {slot}: PRB map disagrees with services")

    def used_prbs(self, cell: int, slot: int) -> int:
        owners = self._grid.get((cell, slot))
        return 0 if owners is None else sum(1 for o in owners if o is not None)

    def owner_map(self, cell: int, slot: int) -> list[str | None]:
        return list(self._owners(cell, slot))

    # -- reporting --------------------------------------------------------

    def tdm_layout(self, cell_id: int) -> dict[int, list[int]]:
        """Slot -> ids of the RBMAs holding a window in that slot on ``cell_id``."""
        layout: dict[int, list[int]] = {}
        for r in self.rbmas:
            w = r.windows.get(cell_id)
            if w is None:
                continue
            for s in sorted(w.slot_pattern):
                layout.setdefault(s, []).append(r.rbma_id)
        return dict(sorted(layout.items()))

    def rbma_coverage_report(self, rbma_id: int) -> dict:
        rbma = self.get(rbma_id)
        cells = sorted(self.cells_of(rbma_id))
        reserved = used = 0
        per_cell = {}
        for c in cells:
            w = self.window_for(rbma_id, c)
            cap = 0 if w is None else w.capacity
            u = 0 if w is None else sum(
                sum(1 for p in range(w.prb_start, w.prb_end + 1) if self._owners(c, s)[p] is not None)
                for s in w.slot_pattern
            )
            per_cell[c] = {"reserved": cap, "used": u, "free": cap - u}
            reserved += cap
            used += u
        admitted = sorted(
            sid for sid, rec in self._services.items()
            if rec.config.rbma_id == rbma_id
            or (rbma.mode is RbmaMode.COMPOSITE and rec.config.rbma_id in rbma.constituents)
        )
        return {
            "rbma_id": rbma_id,
            "mode": rbma.mode.value,
            "cell_count": len(cells),
            "cells": cells,
            "carriers": list(rbma.carriers),
            "slice_tag": rbma.slice_tag,
            "reserved_capacity": reserved,
            "used_capacity": used,
            "free_capacity": reserved - used,
            "per_cell": per_cell,
            "admitted_services": admitted,
            "tdm_layout": {c: self.tdm_layout(c) for c in cells},
        }


@dataclass(frozen=True)
class Reuse3Plan:
    partition: dict[int, int]  # cell -> 0, 1 or 2
    assignment: dict[int, ResourceWindow]
    edges: tuple[tuple[int, int], ...] = field(default=())

    @property
    def partitions_used(self) -> int:
        return len(set(self.partition.values()))


def interference_graph(t: Topology, cells: Iterable[int], radius_km: float) -> dict[int, set[int]]:
    members = set(cells)
    graph = {c: set() for c in members}
    for c in members:
        for n in neighbor_cells(t, c, radius_km):
            if n in members:
                graph[c].add(n)
                graph[n].add(c)
    return graph


def three_color(graph: Mapping[int, set[int]]) -> dict[int, int]:
    """Deterministic backtracking 3-colouring, highest degree first, ties by id."""
    order = sorted(graph, key=lambda c: (-len(graph[c]), c))
    colour: dict[int, int] = {}

    def place(i: int) -> bool:
        if i == len(order):
            return True
        cell = order[i]
        taken = {colour[n] for n in graph[cell] if n in colour}
        for k in range(3):
            if k not in taken:
                colour[cell] = k
                if place(i + 1):
                    return True
                del colour[cell]
        return False

    if not place(0):
        raise NotThreeColorable("interference graph needs more than 3 partitions")
    return colour


def split_slots(slots: Iterable[int], parts: int = 3) -> list[tuple[int, ...]]:
    ordered = sorted(slots)
    n = len(ordered)
    return [tuple(ordered[k * n // parts:(k + 1) * n // parts]) for k in range(parts)]


def plan_reuse3(t: Topology, rbmas: Iterable[Rbma], interference_radius_km: float) -> Reuse3Plan:
    """Give interfering single-cell RBMAs orthogonal thirds of their reserved slots."""
    rbmas = list(rbmas)
    windows: dict[int, ResourceWindow] = {}
    for r in rbmas:
        if r.mode is not RbmaMode.SINGLE_CELL:
            raise SchemaError(f"RBMA {r.rbma_id} is {r.mode.value}; reuse-3 plans single cells only")
        (cell,) = r.cell_ids
        w = r.windows.get(cell)
        if w is None or len(w.slot_pattern) < 3:
            raise InvalidWindow(f"RBMA {r.rbma_id} needs a window of at least 3 slots to split in thirds")
        windows[cell] = w
    graph = interference_graph(t, windows, interference_radius_km)
    colour = three_color(graph)
    assignment = {
        cell: w.with_slots(split_slots(w.slot_pattern)[colour[cell]]) for cell, w in windows.items()
    }
    edges = tuple(sorted((a, b) for a in graph for b in graph[a] if a < b))
    for a, b in edges:
        if assignment[a].overlaps(assignment[b]):
            raise InvalidWindow(f"cells {a} and {b} interfere but their windows are not slot-aligned")
    return Reuse3Plan(dict(sorted(colour.items())), dict(sorted(assignment.items())), edges)
