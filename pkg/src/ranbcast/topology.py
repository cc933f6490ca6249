"""Simulated NG-RAN graph: cells, gNB-DUs, gNB-CUs and the links between them.

Nodes are addressed by short string names so that links, messages and logs
can share one vocabulary:

* ``"cu:<id>"`` and ``"du:<id>"`` for RAN nodes,
* ``"amf"``, ``"upf"``, ``"xuf"`` for the core-side endpoints,
* ``"ue"`` as the generic far end of a Uu link (individual UEs are
  addressed as ``"ue:<id>"`` and resolve to ``"ue"`` for link lookup).

A :class:`Topology` is immutable once :func:`load_topology` returns it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .errors import (
    DanglingReference,
    DuplicateId,
    InvalidLink,
    LimitExceeded,
    SchemaError,
    SimError,
    UnknownCell,
    UnsupportedNumerology,
    raise_collected,
)

MAX_CELLS_PER_DU = 512
MAX_DUS_PER_CU = 2**36 - 1
FRAME_US = 10_000


class PowerClass(str, enum.Enum):
    HPHT = "HPHT"
    LOW_POWER = "LowPower"


class CuRole(str, enum.Enum):
    CP = "CP"
    UP = "UP"
    MC = "MC"


class InterfaceKind(str, enum.Enum):
    N2 = "N2"
    N3 = "N3"
    M1NG = "M1NG"
    XnC = "XnC"
    XnU = "XnU"
    F1C = "F1C"
    F1U = "F1U"
    F1M = "F1M"
    E1 = "E1"
    Uu = "Uu"


@dataclass(frozen=True)
class NumerologyEntry:
    mu: int
    slot_duration_us: int
    max_isd_km: float

    @property
    def slots_per_frame(self) -> int:
        return FRAME_US // self.slot_duration_us


def default_slot_duration_us(mu: int) -> int:
    """1 ms subframes split by 2**mu; negative mu stretches the slot to 2**|mu| ms."""
    if mu >= 0:
        return 1000 // (2**mu)
    return 1000 * 2 ** (-mu)


# mu=-1 stands in for the extended (negative) numerology family; its 2 ms slot
# still tiles a 10 ms frame.
DEFAULT_NUMEROLOGIES: dict[int, NumerologyEntry] = {
    0: NumerologyEntry(0, 1000, 1.41),
    -1: NumerologyEntry(-1, 2000, 120.0),
}


@dataclass(frozen=True)
class Cell:
    cell_id: int
    position: tuple[float, float]
    carrier: int
    bandwidth_prbs: int
    numerology_mu: int = 0
    power_class: PowerClass = PowerClass.HPHT


@dataclass(frozen=True)
class GnbDu:
    du_id: int
    served_cells: tuple[int, ...]
    clock_offset_us: int = 0

    @property
    def node(self) -> str:
        return f"du:{self.du_id}"


@dataclass(frozen=True)
class GnbCu:
    cu_id: int
    roles: frozenset[CuRole]
    child_dus: tuple[int, ...]
    # Symbolic DU count for boundary checks; never materialised.
    declared_du_count: int | None = None

    @property
    def node(self) -> str:
        return f"cu:{self.cu_id}"

    @property
    def du_count(self) -> int:
        if self.declared_du_count is None:
            return len(self.child_dus)
        return max(self.declared_du_count, len(self.child_dus))


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    kind: InterfaceKind
    latency_us: int
    jitter_us: int = 0

    @property
    def endpoints(self) -> tuple[str, str]:
        return (self.a, self.b)

    def other(self, node: str) -> str:
        return self.b if node == self.a else self.a


def node_kind(node: str) -> str:
    return node.split(":", 1)[0]


def link_node(node: str) -> str:
    """Map an addressable node to the name used on links (``ue:7`` -> ``ue``)."""
    return "ue" if node_kind(node) == "ue" else node


@dataclass(frozen=True)
class Check:
    constraint: str
    subject: str
    passed: bool
    detail: str = ""
    error: type[SimError] | None = None


@dataclass(frozen=True)
class DimensionReport:
    checks: tuple[Check, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]


@dataclass(frozen=True)
class Topology:
    cells: Mapping[int, Cell]
    dus: Mapping[int, GnbDu]
    cus: Mapping[int, GnbCu]
    links: tuple[Link, ...] = ()
    numerologies: Mapping[int, NumerologyEntry] = field(
        default_factory=lambda: dict(DEFAULT_NUMEROLOGIES)
    )

    def __post_init__(self) -> None:
        cell_du: dict[int, int] = {}
        for du in self.dus.values():
            for c in du.served_cells:
                cell_du.setdefault(c, du.du_id)
        du_cu: dict[int, int] = {}
        for cu in self.cus.values():
            for d in cu.child_dus:
                du_cu.setdefault(d, cu.cu_id)
        index: dict[tuple[frozenset[str], InterfaceKind], Link] = {}
        for link in self.links:
            index.setdefault((frozenset((link.a, link.b)), link.kind), link)
        object.__setattr__(self, "_cell_du", cell_du)
        object.__setattr__(self, "_du_cu", du_cu)
        object.__setattr__(self, "_link_index", index)

    def cell(self, cell_id: int) -> Cell:
        try:
            return self.cells[cell_id]
        except KeyError:
            raise UnknownCell(f"cell {cell_id} is not defined") from None

    def du_of_cell(self, cell_id: int) -> int:
        self.cell(cell_id)
        try:
            return self._cell_du[cell_id]
        except KeyError:
            raise DanglingReference(f"cell {cell_id} is not served by any DU") from None

    def cu_of_du(self, du_id: int) -> int:
        try:
            return self._du_cu[du_id]
        except KeyError:
            raise DanglingReference(f"DU {du_id} has no parent CU") from None

    def cu_of_cell(self, cell_id: int) -> int:
        return self.cu_of_du(self.du_of_cell(cell_id))

    def numerology(self, mu: int) -> NumerologyEntry:
        try:
            return self.numerologies[mu]
        except KeyError:
            raise UnsupportedNumerology(f"numerology mu={mu} is not configured") from None

    def link(self, a: str, b: str, kind: InterfaceKind | str) -> Link | None:
        key = (frozenset((link_node(a), link_node(b))), InterfaceKind(kind))
        return self._link_index.get(key)

    def links_of(self, node: str, kind: InterfaceKind | str | None = None) -> list[Link]:
        node = link_node(node)
        out = [l for l in self.links if node in (l.a, l.b)]
        if kind is not None:
            out = [l for l in out if l.kind == InterfaceKind(kind)]
        return out

    def control_connected(self, du_id: int) -> bool:
        """True when the DU reaches a CU-CP over F1-C."""
        node = f"du:{du_id}"
        for link in self.links_of(node, InterfaceKind.F1C):
            peer = link.other(node)
            if node_kind(peer) == "cu":
                cu = self.cus.get(int(peer.split(":")[1]))
                if cu is not None and CuRole.CP in cu.roles:
                    return True
        return False

    def distance_km(self, a: int, b: int) -> float:
        return math.dist(self.cell(a).position, self.cell(b).position)

    def slot_duration_us(self, cell_id: int) -> int:
        return self.numerology(self.cell(cell_id).numerology_mu).slot_duration_us

    def slots_per_frame(self, cell_id: int) -> int:
        return self.numerology(self.cell(cell_id).numerology_mu).slots_per_frame


def max_isd_for_numerology(t: Topology | Mapping[int, NumerologyEntry], mu: int) -> float:
    """Largest SFN inter-site distance (km) the numerology tolerates."""
    table = t.numerologies if isinstance(t, Topology) else t
    try:
        return table[mu].max_isd_km
    except KeyError:
        raise UnsupportedNumerology(f"numerology mu={mu} is not configured") from None


def neighbor_cells(t: Topology, cell_id: int, radius_km: float) -> list[int]:
    """Cells within ``radius_km`` of ``cell_id`` (self excluded), nearest first, ties by id."""
    if radius_km <= 0:
        raise ValueError("radius_km must be positive")
    origin = t.cell(cell_id).position
    found = []
    for other in t.cells.values():
        if other.cell_id == cell_id:
            continue
        d = math.dist(origin, other.position)
        if d <= radius_km:
            found.append((d, other.cell_id))
    found.sort()
    return [cid for _, cid in found]


# Which node kinds (and CU roles) each interface may join.
_CU_ANY = frozenset(CuRole)
_INTERFACE_RULES: dict[InterfaceKind, tuple[tuple[str, frozenset[CuRole]], tuple[str, frozenset[CuRole]]]] = {
    InterfaceKind.N2: (("cu", frozenset({CuRole.CP})), ("amf", frozenset())),
    InterfaceKind.N3: (("cu", frozenset({CuRole.UP})), ("upf", frozenset())),
    InterfaceKind.M1NG: (("cu", frozenset({CuRole.UP, CuRole.MC})), ("xuf", frozenset())),
    InterfaceKind.XnC: (("cu", frozenset({CuRole.CP})), ("cu", frozenset({CuRole.CP}))),
    InterfaceKind.XnU: (("cu", frozenset({CuRole.UP, CuRole.MC})), ("cu", frozenset({CuRole.UP, CuRole.MC}))),
    InterfaceKind.F1C: (("cu", frozenset({CuRole.CP})), ("du", frozenset())),
    InterfaceKind.F1U: (("cu", frozenset({CuRole.UP})), ("du", frozenset())),
    InterfaceKind.F1M: (("cu", frozenset({CuRole.MC})), ("du", frozenset())),
    InterfaceKind.E1: (("cu", frozenset({CuRole.CP})), ("cu", frozenset({CuRole.UP, CuRole.MC}))),
    InterfaceKind.Uu: (("du", frozenset()), ("ue", frozenset())),
}


def _endpoint_ok(t: Topology, node: str, kind: str, roles: frozenset[CuRole]) -> bool:
    if node_kind(node) != kind:
        return False
    if kind in ("cu", "du"):
        try:
            ident = int(node.split(":", 1)[1])
        except (IndexError, ValueError):
            return False
        if kind == "du":
            return ident in t.dus
        cu = t.cus.get(ident)
        return cu is not None and (not roles or bool(cu.roles & roles))
    return ":" not in node


def link_is_consistent(t: Topology, link: Link) -> bool:
    first, second = _INTERFACE_RULES[link.kind]
    if link.a == link.b:
        return False
    return (
        _endpoint_ok(t, link.a, *first) and _endpoint_ok(t, link.b, *second)
    ) or (_endpoint_ok(t, link.b, *first) and _endpoint_ok(t, link.a, *second))


def validate_dimensions(t: Topology) -> DimensionReport:
    """Check every structural limit; never raises."""
    checks: list[Check] = []
    add = checks.append

    for du in sorted(t.dus.values(), key=lambda d: d.du_id):
        n = len(du.served_cells)
        add(Check("du_cell_limit", du.node, n <= MAX_CELLS_PER_DU,
                  f"{n} cells (max {MAX_CELLS_PER_DU})", LimitExceeded))
    for cu in sorted(t.cus.values(), key=lambda c: c.cu_id):
        n = cu.du_count
        add(Check("cu_du_limit", cu.node, n <= MAX_DUS_PER_CU,
                  f"{n} DUs (max {MAX_DUS_PER_CU})", LimitExceeded))

    owner: dict[int, int] = {}
    clash = []
    for du in sorted(t.dus.values(), key=lambda d: d.du_id):
        for c in du.served_cells:
            if c in owner and owner[c] != du.du_id:
                clash.append(f"cell {c} served by du:{owner[c]} and du:{du.du_id}")
            owner.setdefault(c, du.du_id)
            if c not in t.cells:
                add(Check("served_cell_defined", du.node, False, f"cell {c} undefined", DanglingReference))
    add(Check("served_cells_disjoint", "dus", not clash, "; ".join(clash), DuplicateId))

    parent: dict[int, int] = {}
    for cu in sorted(t.cus.values(), key=lambda c: c.cu_id):
        for d in cu.child_dus:
            if d not in t.dus:
                add(Check("child_du_defined", cu.node, False, f"du {d} undefined", DanglingReference))
            elif d in parent and parent[d] != cu.cu_id:
                add(Check("du_single_parent", f"du:{d}", False,
                          f"claimed by cu:{parent[d]} and cu:{cu.cu_id}", DuplicateId))
            parent.setdefault(d, cu.cu_id)
    orphans = sorted(set(t.dus) - set(parent))
    add(Check("du_has_parent", "dus", not orphans,
              ", ".join(f"du:{d}" for d in orphans), DanglingReference))

    for cell in sorted(t.cells.values(), key=lambda c: c.cell_id):
        subject = f"cell:{cell.cell_id}"
        add(Check("bandwidth_positive", subject, cell.bandwidth_prbs > 0,
                  f"{cell.bandwidth_prbs} PRBs", SchemaError))
        add(Check("numerology_supported", subject, cell.numerology_mu in t.numerologies,
                  f"mu={cell.numerology_mu}", UnsupportedNumerology))
        if cell.cell_id not in owner:
            add(Check("cell_served", subject, False, "no DU serves this cell", DanglingReference))

    for mu, entry in sorted(t.numerologies.items()):
        ok = entry.slot_duration_us > 0 and FRAME_US % entry.slot_duration_us == 0 and mu >= -2
        add(Check("numerology_tiles_frame", f"mu={mu}", ok,
                  f"slot {entry.slot_duration_us} us", UnsupportedNumerology))

    for link in t.links:
        subject = f"{link.kind.value}:{link.a}-{link.b}"
        add(Check("link_delay_nonnegative", subject, link.latency_us >= 0 and link.jitter_us >= 0,
                  f"latency {link.latency_us} jitter {link.jitter_us}", SchemaError))
        add(Check("interface_endpoints", subject, link_is_consistent(t, link),
                  "endpoint kinds/roles do not match the interface", InvalidLink))
    return DimensionReport(tuple(checks))


def _require(entry: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in entry:
        raise SchemaError(f"{where}: missing required key {key!r}")
    return entry[key]


def build_topology(config: Mapping[str, Any]) -> Topology:
    """Construct a Topology from a config tree without running dimension checks."""
    try:
        return _build(config)
    except (TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, SimError):
            raise
        raise SchemaError(f"malformed topology: {exc}") from None


def _build(config: Mapping[str, Any]) -> Topology:
    errors: list[SimError] = []

    numerologies = dict(DEFAULT_NUMEROLOGIES)
    if "numerologies" in config:
        numerologies = {}
        for row in config["numerologies"]:
            mu = int(_require(row, "mu", "numerology"))
            slot = int(row.get("slot_duration_us", default_slot_duration_us(mu)))
            numerologies[mu] = NumerologyEntry(mu, slot, float(_require(row, "max_isd_km", "numerology")))

    cells: dict[int, Cell] = {}
    for row in config.get("cells", []):
        cid = int(_require(row, "id", "cell"))
        if cid in cells:
            errors.append(DuplicateId(f"cell {cid} defined twice"))
            continue
        cells[cid] = Cell(
            cell_id=cid,
            position=(float(row.get("x_km", 0.0)), float(row.get("y_km", 0.0))),
            carrier=int(_require(row, "carrier", f"cell {cid}")),
            bandwidth_prbs=int(_require(row, "bandwidth_prbs", f"cell {cid}")),
            numerology_mu=int(row.get("numerology", 0)),
            power_class=PowerClass(row.get("power_class", "HPHT")),
        )

    dus: dict[int, GnbDu] = {}
    for row in config.get("dus", []):
        did = int(_require(row, "id", "du"))
        if did in dus:
            errors.append(DuplicateId(f"du {did} defined twice"))
            continue
        served = tuple(int(c) for c in row.get("cells", []))
        for c in served:
            if c not in cells:
                errors.append(DanglingReference(f"du {did} serves undefined cell {c}"))
        dus[did] = GnbDu(did, served, int(row.get("clock_offset_us", 0)))

    cus: dict[int, GnbCu] = {}
    for row in config.get("cus", []):
        cid = int(_require(row, "id", "cu"))
        if cid in cus:
            errors.append(DuplicateId(f"cu {cid} defined twice"))
            continue
        children = tuple(int(d) for d in row.get("dus", []))
        for d in children:
            if d not in dus:
                errors.append(DanglingReference(f"cu {cid} lists undefined du {d}"))
        declared = row.get("declared_du_count")
        cus[cid] = GnbCu(
            cid,
            frozenset(CuRole(r) for r in row.get("roles", ["CP", "UP"])),
            children,
            int(declared) if declared is not None else None,
        )

    links: list[Link] = []
    for row in config.get("links", []):
        a, b = str(_require(row, "a", "link")), str(_require(row, "b", "link"))
        for node in (a, b):
            kind = node_kind(node)
            if kind in ("cu", "du"):
                ident = int(node.split(":", 1)[1])
                if ident not in (cus if kind == "cu" else dus):
                    errors.append(DanglingReference(f"link endpoint {node} is undefined"))
        links.append(Link(a, b, InterfaceKind(_require(row, "kind", "link")),
                          int(row.get("latency_us", 0)), int(row.get("jitter_us", 0))))

    raise_collected(errors)
    return Topology(cells, dus, cus, tuple(links), numerologies)


def load_topology(config: Mapping[str, Any]) -> Topology:
    """Build and validate a Topology.

    Raises the first structural error found with every error attached as
    ``exc.errors`` (``DuplicateId``, ``DanglingReference``, ``LimitExceeded``,
    ``UnsupportedNumerology``, ``InvalidLink`` or ``SchemaError``).
    """
    t = build_topology(config)
    report = validate_dimensions(t)
    errors = [
        (c.error or SchemaError)(f"{c.constraint} failed for {c.subject}: {c.detail}")
        for c in report.failures()
    ]
    raise_collected(errors)
    return t

