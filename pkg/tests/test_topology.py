import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import line, star, star_config
from ranbcast.errors import (
    DanglingReference,
    DuplicateId,
    InvalidLink,
    LimitExceeded,
    SchemaError,
    UnknownCell,
    UnsupportedNumerology,
)
from ranbcast.topology import (
    MAX_CELLS_PER_DU,
    MAX_DUS_PER_CU,
    build_topology,
    load_topology,
    max_isd_for_numerology,
    neighbor_cells,
    validate_dimensions,
)


def test_nine_cells_three_dus():
    t = star([(i * 0.3, 0.0) for i in range(9)], cells_per_du=3)
    assert len(t.cells) == 9
    assert len(t.dus) == 3
    assert t.du_of_cell(7) == 3
    assert t.cu_of_cell(7) == 1
    assert validate_dimensions(t).passed


def test_limits_are_the_documented_constants():
    assert MAX_CELLS_PER_DU == 512
    assert MAX_DUS_PER_CU == 2**36 - 1


def test_512_cells_per_du_passes_513_fails():
    ok = star_config([(0.0, 0.0)] * 512, cells_per_du=512)
    assert validate_dimensions(load_topology(ok)).passed
    bad = star_config([(0.0, 0.0)] * 513, cells_per_du=513)
    with pytest.raises(LimitExceeded):
        load_topology(bad)
    report = validate_dimensions(build_topology(bad))
    assert [c.constraint for c in report.failures()] == ["du_cell_limit"]


def test_du_count_is_symbolic():
    cfg = star_config([(0.0, 0.0)])
    cfg["cus"][0]["declared_du_count"] = 2**36 - 1
    assert validate_dimensions(load_topology(cfg)).passed
    cfg["cus"][0]["declared_du_count"] = 2**36
    with pytest.raises(LimitExceeded):
        load_topology(cfg)


def test_duplicate_and_dangling_ids_collected():
    cfg = star_config(line(2))
    cfg["cells"].append(dict(cfg["cells"][0]))
    cfg["dus"][0]["cells"].append(99)
    with pytest.raises(DuplicateId) as info:
        load_topology(cfg)
    kinds = {type(e) for e in info.value.errors}
    assert kinds == {DuplicateId, DanglingReference}


def test_cell_served_twice_rejected():
    cfg = star_config(line(2))
    cfg["dus"][1]["cells"] = [1, 2]
    with pytest.raises(DuplicateId):
        load_topology(cfg)


def test_interface_endpoint_kinds_checked():
    cfg = star_config(line(1), roles=("CP", "UP"))
    # F1-M needs a CU holding the MC role
    with pytest.raises(InvalidLink):
        load_topology(cfg)
    cfg = star_config(line(1))
    cfg["links"].append({"a": "du:1", "b": "amf", "kind": "N2", "latency_us": 1})
    with pytest.raises(InvalidLink):
        load_topology(cfg)


def test_negative_latency_rejected():
    cfg = star_config(line(1))
    cfg["links"][0]["latency_us"] = -1
    with pytest.raises(SchemaError):
        load_topology(cfg)


def test_zero_bandwidth_rejected():
    cfg = star_config(line(1), bandwidth_prbs=0)
    with pytest.raises(SchemaError):
        load_topology(cfg)


def test_numerology_table():
    t = star(line(1))
    assert max_isd_for_numerology(t, 0) == 1.41
    assert max_isd_for_numerology(t, -1) == 120.0
    with pytest.raises(UnsupportedNumerology):
        max_isd_for_numerology(t, 99)


def test_extended_numerology_slots():
    t = star(line(1), mu=-1)
    assert t.slot_duration_us(1) == 2000
    assert t.slots_per_frame(1) == 5


def test_unsupported_cell_numerology_rejected():
    with pytest.raises(UnsupportedNumerology):
        load_topology(star_config(line(1), mu=3))


def test_neighbors_isolated_and_line():
    t = star([(0.0, 0.0), (100.0, 0.0)])
    assert neighbor_cells(t, 1, 5.0) == []
    t = star(line(3))
    assert neighbor_cells(t, 2, 1.5) == [1, 3]
    with pytest.raises(UnknownCell):
        neighbor_cells(t, 42, 1.0)
    with pytest.raises(ValueError):
        neighbor_cells(t, 1, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=20, max_size=20),
       st.floats(0.1, 6.0))
def test_neighbors_match_pairwise_scan(points, radius):
    t = star(points)
    for cid in t.cells:
        oracle = sorted(
            (math.dist(points[cid - 1], points[o - 1]), o)
            for o in t.cells if o != cid and math.dist(points[cid - 1], points[o - 1]) <= radius
        )
        assert neighbor_cells(t, cid, radius) == [o for _, o in oracle]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 5), st.floats(0, 5)), min_size=2, max_size=12), st.floats(0.1, 4.0))
def test_neighbors_symmetric(points, radius):
    t = star(points)
    for a in t.cells:
        for b in neighbor_cells(t, a, radius):
            assert a in neighbor_cells(t, b, radius)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4))
def test_loaded_topology_round_trips(n_cells, per_du):
    t = star(line(n_cells, 0.2), cells_per_du=per_du)
    assert validate_dimensions(t).passed
