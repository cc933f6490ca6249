"""Builders shared by the test modules."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

from ranbcast.rbma import RbmaRegistry
from ranbcast.topology import Topology, load_topology


def star_config(
    positions: Sequence[tuple[float, float]],
    cells_per_du: int = 1,
    *,
    bandwidth_prbs: int = 52,
    carrier: int = 1,
    mu: int = 0,
    f1u_latency: Iterable[int] | None = None,
    roles: Sequence[str] = ("CP", "UP", "MC"),
) -> dict:
    """One CU over DUs that each serve ``cells_per_du`` consecutive cells, fully linked."""
    cells = [
        {"id": i + 1, "x_km": x, "y_km": y, "carrier": carrier, "bandwidth_prbs": bandwidth_prbs, "numerology": mu}
        for i, (x, y) in enumerate(positions)
    ]
    ids = [c["id"] for c in cells]
    groups = [ids[i:i + cells_per_du] for i in range(0, len(ids), cells_per_du)]
    dus = [{"id": k + 1, "cells": g} for k, g in enumerate(groups)]
    f1u = list(f1u_latency) if f1u_latency is not None else [500] * len(dus)
    links = [{"a": "cu:1", "b": "amf", "kind": "N2", "latency_us": 3000},
             {"a": "upf", "b": "cu:1", "kind": "N3", "latency_us": 500}]
    for du, lat in zip(dus, f1u):
        node = f"du:{du['id']}"
        links += [
            {"a": "cu:1", "b": node, "kind": "F1C", "latency_us": 500},
            {"a": "cu:1", "b": node, "kind": "F1U", "latency_us": lat},
            {"a": "cu:1", "b": node, "kind": "F1M", "latency_us": 500},
            {"a": node, "b": "ue", "kind": "Uu", "latency_us": 1000},
        ]
    return {"cells": cells, "dus": dus,
            "cus": [{"id": 1, "roles": list(roles), "dus": [d["id"] for d in dus]}], "links": links}


def star(positions: Sequence[tuple[float, float]], **kw) -> Topology:
    return load_topology(star_config(positions, **kw))


def registry(positions: Sequence[tuple[float, float]], **kw) -> RbmaRegistry:
    return RbmaRegistry(star(positions, **kw))


def hex7(isd_km: float = 1.0) -> list[tuple[float, float]]:
    """Centre cell plus its six first-ring neighbours."""
    ring = [(isd_km * math.cos(math.radians(60 * k)), isd_km * math.sin(math.radians(60 * k))) for k in range(6)]
    return [(0.0, 0.0)] + ring


def line(n: int, spacing_km: float = 1.0) -> list[tuple[float, float]]:
    return [(i * spacing_km, 0.0) for i in range(n)]
