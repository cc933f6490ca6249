import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ranbcast.bearer_switching import (
    DATA_RE_PER_PRB,
    MAX_MCS,
    SPECTRAL_EFFICIENCY,
    Channel,
    DedupVerdict,
    MeasurementReport,
    PdcpDedupState,
    PdcpPdu,
    Reason,
    RlcConfig,
    RlcMode,
    XrbConfig,
    XrbFunction,
    assignment_cost,
    decide_channels,
    mcs_for_rsrp,
    pdcp_dedup,
    prb_cost,
    route_pdu,
)
from ranbcast.errors import (
    EmptyUeSet,
    InvalidMeasurement,
    InvalidRlcMode,
    InvalidXrbConfig,
    UndecidedUe,
)

D, X = Channel.DTCH, Channel.XTCH


def report(ue, rsrp, ts=0):
    return MeasurementReport(ue, 1, rsrp, ts)


# -- configuration -----------------------------------------------------------------


def test_default_config_creates_channel_pair():
    f = XrbFunction()
    inst = f.configure_xrb(XrbConfig(1))
    assert inst.dtch.channel is D and inst.xtch.channel is X
    assert inst.dtch.logical_channel_id != inst.xtch.logical_channel_id
    assert inst.xtch.config.mode is RlcMode.UM


def test_second_configure_is_idempotent():
    f = XrbFunction()
    first = f.configure_xrb({"xrb_id": 1})
    xtch = first.xtch
    again = f.configure_xrb({"xrb_id": 1, "rsrp_threshold_dbm": -100.0})
    assert again.xtch is xtch
    assert len(f.entities()) == 2
    assert again.config.rsrp_threshold_dbm == -100.0


def test_am_on_xtch_rejected():
    with pytest.raises(InvalidRlcMode):
        XrbConfig(1, multicast_rlc=RlcConfig(RlcMode.AM))
    with pytest.raises(InvalidRlcMode):
        XrbFunction().configure_xrb({"xrb_id": 1, "multicast_rlc": {"mode": "AM"}})
    assert XrbConfig(1, multicast_rlc=RlcConfig(RlcMode.TM)).multicast_rlc.mode is RlcMode.TM


def test_config_invariants():
    with pytest.raises(InvalidXrbConfig):
        XrbConfig(1, dtch_logical_channel_id=4, xtch_logical_channel_id=4)
    with pytest.raises(InvalidXrbConfig):
        XrbConfig(1, min_multicast_ues=0)
    with pytest.raises(InvalidXrbConfig):
        RlcConfig(sn_field_length_bits=10)
    with pytest.raises(InvalidXrbConfig):
        XrbFunction().configure_xrb({"xrb_id": 1, "bogus": 3})


def test_measurement_range():
    assert report(1, -156.0).validate()
    with pytest.raises(InvalidMeasurement):
        report(1, -157.0).validate()
    with pytest.raises(InvalidMeasurement):
        MeasurementReport(1, 1, -90.0, 0, csi_rsrp_dbm=-20.0).validate()
    assert report(1, -200.0).validate(rsrp_range=(-200.0, 0.0))


# -- cost model -----------------------------------------------------------------------


def test_cost_table_monotone():
    assert all(a <= b for a, b in zip(SPECTRAL_EFFICIENCY, SPECTRAL_EFFICIENCY[1:]))
    costs = [prb_cost(m) for m in range(MAX_MCS + 1)]
    assert all(a >= b for a, b in zip(costs, costs[1:]))
    assert costs[0] == -(-12000 // (SPECTRAL_EFFICIENCY[0] * DATA_RE_PER_PRB)) == 388
    with pytest.raises(ValueError):
        prb_cost(MAX_MCS + 1)


def test_mcs_map_clamped_and_monotone():
    assert mcs_for_rsrp(-130.0) == 0
    assert mcs_for_rsrp(-60.0) == MAX_MCS
    values = [mcs_for_rsrp(r / 2) for r in range(-260, -140)]
    assert values == sorted(values)


# -- decisions ------------------------------------------------------------------------


def test_no_reports_all_xtch():
    d = decide_channels([1, 2, 3], {}, XrbConfig(1), 0)
    assert d.assignment == {1: X, 2: X, 3: X}
    assert set(d.reasons.values()) == {Reason.NO_REPORT}
    assert d.estimated_prb_cost_multicast == prb_cost(0)
    assert d.gain == 3.0


def test_threshold_split():
    reports = {1: report(1, -120.0), 2: report(2, -100.0), 3: report(3, -95.0)}
    d = decide_channels([1, 2, 3], reports, XrbConfig(1, rsrp_threshold_dbm=-110.0), 0)
    assert d.assignment == {1: D, 2: X, 3: X}
    assert d.reasons[1] is Reason.BELOW_THRESHOLD


def test_threshold_tie_meets():
    d = decide_channels([1, 2], {1: report(1, -110.0), 2: report(2, -90.0)},
                        XrbConfig(1, rsrp_threshold_dbm=-110.0), 0)
    assert d.assignment == {1: X, 2: X}


def test_min_count_gate_demotes():
    reports = {1: report(1, -120.0), 2: report(2, -100.0)}
    d = decide_channels([1, 2], reports, XrbConfig(1, min_multicast_ues=2), 0)
    assert d.assignment == {1: D, 2: D}
    assert d.reasons[2] is Reason.MIN_COUNT_GATE
    assert d.gain == 1.0


def test_stale_report_equals_no_report():
    cfg = XrbConfig(1, rsrp_threshold_dbm=-110.0)
    stale = {1: report(1, -150.0, ts=0), 2: report(2, -150.0, ts=0)}
    d = decide_channels([1, 2], stale, cfg, now_us=cfg.report_staleness_us + 1)
    none = decide_channels([1, 2], {}, cfg, 0)
    assert (d.assignment, d.ue_mcs, d.estimated_prb_cost_multicast) == \
        (none.assignment, none.ue_mcs, none.estimated_prb_cost_multicast)
    assert d.reasons[1] is Reason.STALE_REPORT
    fresh = decide_channels([1, 2], stale, cfg, now_us=cfg.report_staleness_us)
    assert fresh.assignment == {1: D, 2: D}


def test_csi_flag():
    rep = {1: MeasurementReport(1, 1, -120.0, 0, csi_rsrp_dbm=-90.0), 2: report(2, -90.0)}
    assert decide_channels([1, 2], rep, XrbConfig(1), 0).assignment[1] is D
    assert decide_channels([1, 2], rep, XrbConfig(1, use_csi_rsrp=True), 0).assignment[1] is X


def test_empty_set():
    with pytest.raises(EmptyUeSet):
        decide_channels([], {}, XrbConfig(1), 0)


def oracle(ues, reports, cfg, now):
    """Cheapest feasible assignment by enumerating all 2^n channel maps."""
    mcs, forced = {}, set()
    for u in ues:
        r = reports.get(u)
        if r is None or now - r.timestamp_us > cfg.report_staleness_us:
            mcs[u] = 0
        else:
            mcs[u] = mcs_for_rsrp(r.ss_rsrp_dbm)
            if r.ss_rsrp_dbm < cfg.rsrp_threshold_dbm:
                forced.add(u)
    best = None
    for bits in itertools.product((D, X), repeat=len(ues)):
        a = dict(zip(ues, bits))
        on_x = [u for u in ues if a[u] is X]
        if any(u in forced for u in on_x):
            continue
        if on_x and len(on_x) < cfg.min_multicast_ues:
            continue
        cost = sum(-(-cfg.payload_bits // (SPECTRAL_EFFICIENCY[mcs[u]] * DATA_RE_PER_PRB)) for u in ues if a[u] is D)
        if on_x:
            cost += -(-cfg.payload_bits // (SPECTRAL_EFFICIENCY[min(mcs[u] for u in on_x)] * DATA_RE_PER_PRB))
        # ties prefer more UEs on the shared channel
        key = (cost, -len(on_x))
        if best is None or key < best[0]:
            best = (key, a)
    return best[0][0], best[1]


instance = st.integers(1, 6).flatmap(lambda n: st.tuples(
    st.just(list(range(1, n + 1))),
    st.lists(st.one_of(st.none(), st.tuples(st.floats(-140.0, -60.0), st.integers(0, 400_000))),
             min_size=n, max_size=n),
    st.floats(-125.0, -85.0),
    st.integers(1, 4),
))


@settings(max_examples=3000, deadline=None)
@given(instance)
def test_decision_matches_exhaustive_oracle(inst):
    ues, raw, threshold, min_ues = inst
    reports = {u: report(u, r[0], r[1]) for u, r in zip(ues, raw) if r is not None}
    cfg = XrbConfig(1, rsrp_threshold_dbm=threshold, min_multicast_ues=min_ues)
    now = 300_000
    d = decide_channels(ues, reports, cfg, now)
    cost, best = oracle(ues, reports, cfg, now)
    assert set(d.assignment) == set(ues)
    assert d.estimated_prb_cost_multicast == assignment_cost(d.assignment, d.ue_mcs, cfg.payload_bits) == cost
    assert d.assignment == best


rsrps = st.lists(st.floats(-140.0, -60.0), min_size=1, max_size=8)


@settings(max_examples=300, deadline=None)
@given(rsrps, st.floats(0.0, 30.0), st.integers(1, 4))
def test_raising_rsrp_never_demotes(values, delta, min_ues):
    cfg = XrbConfig(1, min_multicast_ues=min_ues)
    ues = list(range(1, len(values) + 1))
    before = decide_channels(ues, {u: report(u, v) for u, v in zip(ues, values)}, cfg, 0)
    after = decide_channels(ues, {u: report(u, min(v + delta, -31.0)) for u, v in zip(ues, values)}, cfg, 0)
    assert not any(before.assignment[u] is X and after.assignment[u] is D for u in ues)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-110.0, -40.0), min_size=2, max_size=10))
def test_multicast_dominates_when_all_qualify(values):
    cfg = XrbConfig(1, rsrp_threshold_dbm=-110.0, min_multicast_ues=2)
    ues = list(range(1, len(values) + 1))
    d = decide_channels(ues, {u: report(u, v) for u, v in zip(ues, values)}, cfg, 0)
    assert d.dtch_ues == ()
    assert d.estimated_prb_cost_multicast <= d.estimated_prb_cost_unicast
    assert d.gain >= 1.0


@settings(max_examples=100, deadline=None)
@given(rsrps, st.integers(0, 500_000))
def test_decisions_deterministic(values, now):
    ues = list(range(1, len(values) + 1))
    reports = {u: report(u, v, ts=u * 1000) for u, v in zip(ues, values)}
    a = decide_channels(ues, reports, XrbConfig(1), now)
    b = decide_channels(list(reversed(ues)), dict(reversed(list(reports.items()))), XrbConfig(1), now)
    assert (a.assignment, a.reasons, a.estimated_prb_cost_unicast, a.estimated_prb_cost_multicast) == \
        (b.assignment, b.reasons, b.estimated_prb_cost_unicast, b.estimated_prb_cost_multicast)


# -- routing and duplicate detection ------------------------------------------------


def decision_for(assignment):
    ues = sorted(assignment)
    reports = {u: report(u, -90.0 if assignment[u] is X else -130.0) for u in ues}
    n_x = sum(1 for c in assignment.values() if c is X)
    return decide_channels(ues, reports, XrbConfig(1, min_multicast_ues=max(1, n_x)), 0)


def test_route_copy_counts():
    pdu = PdcpPdu(1, b"p")
    assert len(route_pdu(pdu, decision_for({u: X for u in range(5)}))) == 1
    assert len(route_pdu(pdu, decision_for({u: D for u in range(5)}))) == 5
    mixed = route_pdu(pdu, decision_for({0: D, 1: D, 2: X, 3: X, 4: X}))
    assert len(mixed) == 3
    (shared,) = [c for c in mixed if c.channel is X]
    assert shared.ue_ids == (2, 3, 4)
    assert shared.logical_channel_id == 5


def test_route_undecided_ue():
    d = decision_for({1: X, 2: X})
    with pytest.raises(UndecidedUe):
        route_pdu(PdcpPdu(1), d, targets=[1, 3])


def test_dedup_examples():
    s = PdcpDedupState()
    assert pdcp_dedup(s, 1, 7) is DedupVerdict.DELIVER
    assert pdcp_dedup(s, 1, 7) is DedupVerdict.DISCARD
    assert pdcp_dedup(s, 2, 7) is DedupVerdict.DELIVER  # per-UE windows


def test_dedup_channel_agnostic():
    s = PdcpDedupState()
    copies = route_pdu(PdcpPdu(7), decision_for({1: X, 2: X}), duplicate_for=[1])
    verdicts = [pdcp_dedup(s, 1, c.pdu.sn) for c in copies if 1 in c.ue_ids]
    assert [c.channel for c in copies if 1 in c.ue_ids] == [X, D]
    assert verdicts == [DedupVerdict.DELIVER, DedupVerdict.DISCARD]


def test_dedup_window_advances():
    s = PdcpDedupState(window_size=8)
    for sn in range(1, 10):
        assert pdcp_dedup(s, 1, sn) is DedupVerdict.DELIVER
    assert s.highest(1) == 9
    assert pdcp_dedup(s, 1, 1) is DedupVerdict.DELIVER
    assert pdcp_dedup(s, 1, 2) is DedupVerdict.DISCARD  # still inside the window
    assert s.highest(1) == 9


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 20_000), min_size=1, max_size=200))
def test_dedup_window_monotone(sns):
    s = PdcpDedupState(window_size=64)
    seen = []
    for sn in sns:
        pdcp_dedup(s, 1, sn)
        seen.append(s.highest(1))
    assert seen == sorted(seen)


def deliveries(assignment, dup, n_pdus, order_seed=0):
    d = decision_for(assignment)
    state = PdcpDedupState()
    copies = [c for sn in range(n_pdus) for c in route_pdu(PdcpPdu(sn), d, duplicate_for=dup)]
    # XTCH copies of later PDUs can overtake DTCH copies of earlier ones
    copies.sort(key=lambda c: ((c.pdu.sn * 7 + order_seed) % n_pdus, c.channel.value))
    count = {u: {} for u in assignment}
    for c in copies:
        for u in c.ue_ids:
            if pdcp_dedup(state, u, c.pdu.sn) is DedupVerdict.DELIVER:
                count[u][c.pdu.sn] = count[u].get(c.pdu.sn, 0) + 1
    return count


def test_delivery_exactly_once_exhaustive_five_ues():
    ues = range(1, 6)
    for bits in itertools.product((D, X), repeat=5):
        assignment = dict(zip(ues, bits))
        for mask in range(32):
            dup = [u for u in ues if mask >> (u - 1) & 1]
            count = deliveries(assignment, dup, n_pdus=6, order_seed=mask)
            assert all(count[u] == {sn: 1 for sn in range(6)} for u in ues)
