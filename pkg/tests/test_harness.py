import copy
import filecmp
import json
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from helpers import line, star
from ranbcast.errors import (
    ColumnMismatch,
    IllegalMessage,
    InsufficientSamples,
    InvalidMeasurement,
    IoFailure,
    NonMonotoneTime,
    NoSuchLink,
    RuntimeInvariantViolation,
    SchemaError,
)
from ranbcast.harness import (
    EventKind,
    EventQueue,
    InterfaceMessage,
    MessageBus,
    MetricsStore,
    Waypoint,
    deliver,
    emit_report,
    latency_report,
    load_mobility_trace,
    load_report,
    load_scenario,
    parse_scenario,
    run_scenario,
    write_mobility_trace,
)
from ranbcast.harness.cli import main
from ranbcast.harness.engine import PHASE_CHECK, PHASE_DELIVERY, PHASE_EMIT
from ranbcast.harness.messages import BodyKind, TunnelTable
from ranbcast.harness.traces import parse_mobility_trace
from ranbcast.topology import InterfaceKind, load_topology


def doc_of(path):
    return tomllib.loads(path.read_text())


# -- engine ------------------------------------------------------------------------------


def test_queue_orders_by_time_phase_seq():
    q = EventQueue()
    q.push(10, EventKind.TIMER, "late")
    q.push(5, EventKind.TIMER, "check", PHASE_CHECK)
    q.push(5, EventKind.TIMER, "emit", PHASE_EMIT)
    q.push(5, EventKind.TIMER, "a")
    q.push(5, EventKind.TIMER, "b")
    q.push(5, EventKind.MESSAGE_DELIVERY, "delivery", PHASE_DELIVERY)
    assert [q.pop().payload for _ in range(6)] == ["delivery", "a", "b", "emit", "check", "late"]
    with pytest.raises(ValueError):
        q.push(9, EventKind.TIMER)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 100), st.integers(0, 3)), max_size=50))
def test_queue_pops_sorted_unique_seq(items):
    q = EventQueue()
    for t, ph in items:
        q.push(t, EventKind.TIMER, None, ph)
    popped = [q.pop() for _ in range(len(items))]
    keys = [(e.time_us, e.phase, e.seq) for e in popped]
    assert keys == sorted(keys)
    assert len({e.seq for e in popped}) == len(items)


# -- messages ----------------------------------------------------------------------------


def bus_for(f1u_latency=2000, seed=0):
    t = star(line(1), f1u_latency=[f1u_latency])
    q = EventQueue()
    return MessageBus(t, q, seed), q


def test_f1u_delivery_is_additive():
    bus, q = bus_for(2000)
    ev = deliver(bus, InterfaceMessage(InterfaceKind.F1U, "cu:1", "du:1", BodyKind.USER_DATA), 10_000)
    assert ev.time_us == 12_000
    assert q.pop() is ev
    bus.accept(ev.payload)
    bus.check_conservation()


def test_user_data_on_n2_illegal():
    with pytest.raises(IllegalMessage):
        InterfaceMessage(InterfaceKind.N2, "cu:1", "amf", BodyKind.USER_DATA)


def test_unlinked_nodes():
    bus, _ = bus_for()
    with pytest.raises(NoSuchLink):
        bus.deliver(InterfaceMessage(InterfaceKind.F1U, "cu:1", "du:9", BodyKind.USER_DATA), 0)


def test_conservation_ledger():
    bus, q = bus_for()
    msg = InterfaceMessage(InterfaceKind.F1U, "cu:1", "du:1", BodyKind.USER_DATA)
    a, b = bus.deliver(msg, 0), bus.deliver(msg, 0)
    with pytest.raises(RuntimeInvariantViolation):
        bus.check_conservation()
    bus.accept(a.payload)
    bus.drop(b.payload, 5, "injected")
    bus.check_conservation()
    with pytest.raises(RuntimeInvariantViolation):
        bus.accept(a.payload)


def test_jitter_is_seeded():
    cfg_topo = star(line(1)).links
    assert cfg_topo  # sanity

    def times(seed):
        from helpers import star_config
        cfg = star_config(line(1))
        for l in cfg["links"]:
            if l["kind"] == "F1U":
                l["jitter_us"] = 1000
        bus = MessageBus(load_topology(cfg), EventQueue(), seed)
        msg = InterfaceMessage(InterfaceKind.F1U, "cu:1", "du:1", BodyKind.USER_DATA)
        return [bus.deliver(msg, 0).time_us for _ in range(20)]

    assert times(1) == times(1)
    assert times(1) != times(2)
    assert all(500 <= x <= 1500 for x in times(3))


def test_tunnel_table():
    tt = TunnelTable()
    a = tt.open(1, "cu:1", 2)
    assert tt.open(1, "cu:1", 2) is a
    b = tt.open(1, "cu:1", 3)
    assert a.tunnel_id != b.tunnel_id
    assert [x.tunnel_id for x in tt.active()] == [a.tunnel_id, b.tunnel_id]
    tt.close(1, 2)
    with pytest.raises(RuntimeInvariantViolation):
        tt.close(1, 2)


# -- scenario schema ---------------------------------------------------------------------


def test_scenario_schema_errors(scenarios_dir):
    base = doc_of(scenarios_dir / "latency.toml")
    broken = []
    d = copy.deepcopy(base); d["bogus"] = {}; broken.append(d)
    d = copy.deepcopy(base); del d["topology"]; broken.append(d)
    d = copy.deepcopy(base); d["scenario"]["durration_us"] = 5; broken.append(d)
    d = copy.deepcopy(base); d["traffic"][0]["ue"] = 99; broken.append(d)
    d = copy.deepcopy(base); d["multicast"] = [{"at_us": 0}]; broken.append(d)
    d = copy.deepcopy(base); d["ues"].append(dict(d["ues"][0])); broken.append(d)
    for doc in broken:
        with pytest.raises(SchemaError):
            parse_scenario(doc)


def test_receive_only_cannot_be_addressed(scenarios_dir):
    d = doc_of(scenarios_dir / "latency.toml")
    d["ues"][0]["capability"] = "ReceiveOnly"
    with pytest.raises(SchemaError):
        parse_scenario(d)


def test_unreadable_scenario(tmp_path):
    with pytest.raises(SchemaError):
        load_scenario(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[scenario\n")
    with pytest.raises(SchemaError):
        load_scenario(bad)


# -- traces ------------------------------------------------------------------------------

HEADER = "time_us,ue_id,x_km,y_km,rsrp_dbm_1,rsrp_dbm_2\n"


def test_static_ue_trace():
    tr = parse_mobility_trace((HEADER + "0,1,0.0,0.0,-80.0,-90.0\n").splitlines())
    assert tr.cell_ids == (1, 2)
    (wp,) = tr.for_ue(1)
    assert wp.rsrp_dbm == {1: -80.0, 2: -90.0}


def test_trace_errors():
    with pytest.raises(NonMonotoneTime):
        parse_mobility_trace((HEADER + "10,1,0,0,-80,-90\n5,1,0,0,-80,-90\n").splitlines())
    # per-UE monotonicity: another UE may be earlier
    parse_mobility_trace((HEADER + "10,1,0,0,-80,-90\n5,2,0,0,-80,-90\n").splitlines())
    with pytest.raises(ColumnMismatch):
        parse_mobility_trace(("time_us,ue,x_km,y_km,rsrp_dbm_1\n").splitlines())
    with pytest.raises(ColumnMismatch):
        parse_mobility_trace((HEADER + "10,1,0,0,-80\n").splitlines())
    with pytest.raises(ColumnMismatch):
        parse_mobility_trace(HEADER.splitlines(), cell_ids=[1, 2, 3])
    with pytest.raises(InvalidMeasurement):
        parse_mobility_trace((HEADER + "0,1,0,0,-10,-90\n").splitlines())


def test_trace_round_trip(tmp_path):
    wps = [Waypoint(0, 1, 0.0, 0.0, {1: -80.0, 2: -95.5}), Waypoint(100, 1, 0.5, 0.0, {1: -90.0, 2: -85.0})]
    path = tmp_path / "t.csv"
    write_mobility_trace(path, [1, 2], wps)
    assert path.read_text().splitlines()[0] == HEADER.strip()
    assert load_mobility_trace(path, [1, 2]).waypoints == tuple(wps)


# -- runs and reports ----------------------------------------------------------------------


def test_mobility_crossing_one_rbma_update(scenarios_dir):
    res = run_scenario(scenarios_dir / "mobility.toml")
    c = res.metrics.counters
    assert c["rbma_updates"] == 1
    assert len(res.metrics.rows("rbma_updates")) == 1
    assert c["reselections_in_rbma"] == 50
    assert res.contexts[2].uplink_messages == 0


def test_latency_report_values(scenarios_dir):
    lat = latency_report(run_scenario(scenarios_dir / "latency.toml"))
    assert (lat["cp"]["min"], lat["cp"]["max"]) == (15000, 15000)
    assert (lat["up"]["min"], lat["up"]["max"]) == (2000, 2000)
    assert lat["resume"]["max"] < lat["cp"]["min"]
    assert lat["cp_meets_target"] and lat["up_meets_target"] and lat["resume_below_setup"]


def test_latency_report_needs_samples():
    with pytest.raises(InsufficientSamples):
        latency_report(MetricsStore())


def empty_doc():
    return {"scenario": {"name": "empty"}, "topology": {
        "cells": [{"id": 1, "x_km": 0.0, "y_km": 0.0, "carrier": 1, "bandwidth_prbs": 52}],
        "dus": [{"id": 1, "cells": [1]}],
        "cus": [{"id": 1, "roles": ["CP", "UP"], "dus": [1]}],
        "links": [{"a": "cu:1", "b": "du:1", "kind": "F1C", "latency_us": 500}],
    }}


def test_empty_scenario(tmp_path):
    res = run_scenario(parse_scenario(empty_doc()))
    assert res.events == 0
    assert res.messages["sent"] == 0
    report = emit_report(res, tmp_path / "out")
    assert report["passed"]
    assert report["latency"] is None
    assert all(r["status"] == "n/a" for r in report["requirements"])
    assert (tmp_path / "out" / "emission_log.csv").read_text().count("\n") == 1  # header only


def test_report_files_and_reload(tmp_path, scenarios_dir):
    res = run_scenario(scenarios_dir / "showcase.toml")
    rep = emit_report(res, tmp_path / "run")
    names = sorted(p.name for p in (tmp_path / "run").iterdir())
    assert names == ["alignment_log.csv", "decision_log.csv", "emission_log.csv", "frames.txt",
                     "report.json", "requirements.csv", "state_log.csv", "summary.txt"]
    assert load_report(tmp_path / "run") == json.loads(json.dumps(rep))
    assessed = [r for r in rep["requirements"] if r["status"] != "n/a"]
    assert {r["id"] for r in assessed} == {"R1", "R2", "R3", "R4", "R5", "R6", "L1"}
    assert all(r["status"] == "pass" for r in assessed)
    assert {r["id"] for r in rep["requirements"] if r["status"] == "n/a"} == {"R7", "R8"}


def test_report_errors(tmp_path, scenarios_dir):
    with pytest.raises(SchemaError):
        load_report(tmp_path)
    (tmp_path / "report.json").write_text("{not json")
    with pytest.raises(SchemaError):
        load_report(tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    res = run_scenario(parse_scenario(empty_doc()))
    with pytest.raises(IoFailure):
        emit_report(res, blocker / "out")


def test_same_seed_byte_identical(tmp_path, scenarios_dir):
    for k in (1, 2):
        emit_report(run_scenario(scenarios_dir / "showcase.toml", seed=4), tmp_path / f"r{k}")
    cmp = filecmp.dircmp(tmp_path / "r1", tmp_path / "r2")
    assert cmp.left_list == cmp.right_list
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "r1", tmp_path / "r2", cmp.left_list, shallow=False)
    assert mismatch == [] and errors == []


def strip_jitter(report):
    report = copy.deepcopy(report)
    report.pop("seed")
    for s in report["sync_streams"]:
        s.pop("mean_arrival_slack_us")
    return report


def test_seeds_differ_only_in_jitter_fields(tmp_path, scenarios_dir):
    reps = [emit_report(run_scenario(scenarios_dir / "sfn3.toml", seed=s), tmp_path / f"s{s}") for s in (1, 2)]
    assert reps[0]["sync_streams"][0]["mean_arrival_slack_us"] != reps[1]["sync_streams"][0]["mean_arrival_slack_us"]
    assert strip_jitter(reps[0]) == strip_jitter(reps[1])
    logs = [p.name for p in (tmp_path / "s1").iterdir() if p.suffix in (".csv", ".txt") and p.name != "summary.txt"]
    _, mismatch, _ = filecmp.cmpfiles(tmp_path / "s1", tmp_path / "s2", logs, shallow=False)
    assert mismatch == []


def test_clock_skew_fails_only_sfn_row(tmp_path, scenarios_dir):
    d = doc_of(scenarios_dir / "sfn3.toml")
    d["scenario"]["duration_us"] = 1_000_000
    d["faults"] = {"clock_skew": [{"du": 2, "offset_us": 5}]}
    rep = emit_report(run_scenario(parse_scenario(d, scenarios_dir / "sfn3.toml")), tmp_path / "skew")
    status = {r["id"]: r["status"] for r in rep["requirements"]}
    assert status["R5"] == "fail"
    assert status["R1"] == status["R3"] == "pass"
    assert not rep["passed"]
    rows = (tmp_path / "skew" / "alignment_log.csv").read_text().splitlines()[1:]
    assert rows and all("Misaligned" in r and ",2," in r for r in rows)


def test_skew_fault_needs_known_du(scenarios_dir):
    d = doc_of(scenarios_dir / "sfn3.toml")
    d["faults"] = {"clock_skew": [{"du": 9, "offset_us": 5}]}
    with pytest.raises(SchemaError):
        run_scenario(parse_scenario(d, scenarios_dir / "sfn3.toml"))


def test_multicast_run_delivers_exactly_once(scenarios_dir):
    res = run_scenario(scenarios_dir / "multicast.toml")
    c = res.metrics.counters
    assert c["multicast_pdus"] == 40
    assert c["multicast_delivered"] == 40 * 5
    # the second burst duplicates to UEs 2 and 4 over DTCH; dedup drops one copy each
    assert c["multicast_duplicates_discarded"] == 20 * 2
    first = [r for r in res.metrics.rows("decision") if r[0] == 50_000]
    assert [(r[2], r[3]) for r in first] == [(1, "Dtch"), (2, "Xtch"), (3, "Xtch"), (4, "Xtch"), (5, "Xtch")]


# -- CLI -----------------------------------------------------------------------------------


def test_cli_exit_codes(tmp_path, scenarios_dir, capsys):
    assert main(["validate", str(scenarios_dir / "latency.toml")]) == 0
    assert main(["run", str(scenarios_dir / "latency.toml"), "--out", str(tmp_path / "o")]) == 0
    assert "result: PASS" in capsys.readouterr().out
    assert main(["report", str(tmp_path / "o")]) == 0
    assert main(["report", str(tmp_path / "missing")]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("[topology]\ncells = 3\n")
    assert main(["validate", str(bad)]) == 2


def test_cli_failed_row_exits_one(tmp_path, scenarios_dir):
    d = (scenarios_dir / "sfn3.toml").read_text().replace("duration_us = 10_200_000", "duration_us = 500_000")
    skewed = tmp_path / "skew.toml"
    skewed.write_text(d + "\n[faults]\nclock_skew = [{ du = 1, offset_us = 3 }]\n")
    assert main(["run", str(skewed), "--out", str(tmp_path / "o")]) == 1


def test_inputs_after_duration_ignored(scenarios_dir):
    d = doc_of(scenarios_dir / "mobility.toml")
    d["scenario"]["duration_us"] = 5_050_000
    res = run_scenario(parse_scenario(d, scenarios_dir / "mobility.toml"))
    assert res.metrics.counters["reselections"] == 100
    assert res.metrics.counters.get("rbma_updates", 0) == 0
