"""Mobility traces: CSV of timed UE positions with per-cell RSRP columns.

The header is fixed: ``time_us,ue_id,x_km,y_km`` followed by one
``rsrp_dbm_<cell_id>`` column per cell in ascending id order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from ..bearer_switching import RSRP_RANGE_DBM
from ..errors import ColumnMismatch, InvalidMeasurement, NonMonotoneTime, SchemaError

FIXED_COLUMNS = ("time_us", "ue_id", "x_km", "y_km")
RSRP_PREFIX = "rsrp_dbm_"


@dataclass(frozen=True)
class Waypoint:
    time_us: int
    ue_id: int
    x_km: float
    y_km: float
    rsrp_dbm: Mapping[int, float] = field(hash=False)


@dataclass(frozen=True)
class MobilityTrace:
    cell_ids: tuple[int, ...]
    waypoints: tuple[Waypoint, ...]

    def for_ue(self, ue_id: int) -> list[Waypoint]:
        return [w for w in self.waypoints if w.ue_id == ue_id]

    @property
    def ue_ids(self) -> tuple[int, ...]:
        return tuple(sorted({w.ue_id for w in self.waypoints}))


def trace_header(cell_ids: Iterable[int]) -> list[str]:
    return list(FIXED_COLUMNS) + [f"{RSRP_PREFIX}{c}" for c in sorted(cell_ids)]


def _cells_from_header(header: list[str]) -> tuple[int, ...]:
    if tuple(header[:4]) != FIXED_COLUMNS:
        raise ColumnMismatch(f"trace must start with {','.join(FIXED_COLUMNS)}, got {','.join(header[:4])}")
    cells = []
    for col in header[4:]:
        if not col.startswith(RSRP_PREFIX) or not col[len(RSRP_PREFIX):].isdigit():
            raise ColumnMismatch(f"unexpected trace column {col!r}")
        cells.append(int(col[len(RSRP_PREFIX):]))
    if not cells:
        raise ColumnMismatch("trace has no RSRP columns")
    if cells != sorted(set(cells)):
        raise ColumnMismatch("RSRP columns must be unique and in ascending cell id order")
    return tuple(cells)


def parse_mobility_trace(
    lines: Iterable[str], cell_ids: Iterable[int] | None = None, rsrp_range: tuple[float, float] = RSRP_RANGE_DBM
) -> MobilityTrace:
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ColumnMismatch("empty trace") from None
    cells = _cells_from_header(header)
    if cell_ids is not None and trace_header(cell_ids) != header:
        raise ColumnMismatch(f"trace columns {header[4:]} do not match topology cells {sorted(cell_ids)}")
    lo, hi = rsrp_range
    last: dict[int, int] = {}
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ColumnMismatch(f"line {lineno}: {len(row)} fields, header has {len(header)}")
        try:
            t, ue = int(row[0]), int(row[1])
            x, y = float(row[2]), float(row[3])
            rsrp = {c: float(v) for c, v in zip(cells, row[4:])}
        except ValueError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
        if ue in last and t < last[ue]:
            raise NonMonotoneTime(f"line {lineno}: UE {ue} time {t} < previous {last[ue]}")
        last[ue] = t
        for c, v in rsrp.items():
            if not lo <= v <= hi:
                raise InvalidMeasurement(f"line {lineno}: RSRP {v} dBm for cell {c} outside [{lo}, {hi}]")
        out.append(Waypoint(t, ue, x, y, rsrp))
    return MobilityTrace(cells, tuple(out))


def load_mobility_trace(path: str | Path, cell_ids: Iterable[int] | None = None) -> MobilityTrace:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            return parse_mobility_trace(fh, cell_ids)
    except OSError as exc:
        raise SchemaError(f"cannot read trace {path}: {exc}") from None


def write_mobility_trace(path: str | Path, cell_ids: Iterable[int], waypoints: Iterable[Waypoint]) -> None:
    cells = sorted(cell_ids)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(cells))
        for wp in waypoints:
            w.writerow([wp.time_us, wp.ue_id, wp.x_km, wp.y_km] + [wp.rsrp_dbm[c] for c in cells])
