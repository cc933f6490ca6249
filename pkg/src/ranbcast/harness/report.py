"""Run outputs: latency summary, requirement checklist and artifact files."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Iterable, Mapping

from ..errors import InsufficientSamples, IoFailure, SchemaError
from ..rbma import RbmaMode
from ..sfn_scheduler import multiplex_report
from .metrics import ALIGNMENT_COLUMNS, DECISION_COLUMNS, EMISSION_COLUMNS, STATE_COLUMNS, MetricsStore
from .simulation import RunResult

REPORT_FILE = "report.json"


def _stats(values: list[int]) -> dict[str, Any] | None:
    if not values:
        return None
    return {"n": len(values), "min": min(values), "mean": sum(values) / len(values), "max": max(values)}


def latency_report(
    source: RunResult | MetricsStore | Mapping[str, list[int]] | str | Path,
    cp_target_us: int | None = None,
    up_target_us: int | None = None,
) -> dict[str, Any]:
    """CP (Idle to Connected setup), resume and UP latency statistics.

    Raises InsufficientSamples unless the run holds at least one setup and
    one user-plane delivery.
    """
    if isinstance(source, (str, Path)):
        doc = load_report(source)
        samples = doc["metrics"]["samples"]
        targets = doc.get("latency", {}).get("targets", {})
        cp_target_us = targets.get("cp_us") if cp_target_us is None else cp_target_us
        up_target_us = targets.get("up_us") if up_target_us is None else up_target_us
    elif isinstance(source, RunResult):
        samples = source.metrics.samples
        pol = source.scenario.policies
        cp_target_us = pol.cp_target_us if cp_target_us is None else cp_target_us
        up_target_us = pol.up_target_us if up_target_us is None else up_target_us
    elif isinstance(source, MetricsStore):
        samples = source.samples
    else:
        samples = source
    setup = list(samples.get("cp_setup", []))
    resume = list(samples.get("cp_resume", []))
    up = list(samples.get("up", []))
    if not setup:
        raise InsufficientSamples("no Idle to Connected setup was observed")
    if not up:
        raise InsufficientSamples("no user-plane delivery was observed")
    out: dict[str, Any] = {
        "cp": _stats(setup),
        "resume": _stats(resume),
        "up": _stats(up),
        "targets": {"cp_us": cp_target_us, "up_us": up_target_us},
        "resume_below_setup": (max(resume) < min(setup)) if resume else None,
    }
    out["cp_meets_target"] = None if cp_target_us is None else max(setup) <= cp_target_us
    out["up_meets_target"] = None if up_target_us is None else max(up) <= up_target_us
    return out


def _row(rid: str, name: str, assessed: bool, passed: bool | None, evidence: str) -> dict[str, Any]:
    return {"id": rid, "requirement": name, "assessed": assessed,
            "status": "n/a" if not assessed else ("pass" if passed else "fail"), "evidence": evidence}


def requirement_rows(result: RunResult, latency: Mapping[str, Any] | None) -> list[dict[str, Any]]:
    c = result.metrics.counters
    sc = result.scenario
    rbmas = result.registry.rbmas
    rows = []

    n_services = len(sc.services)
    rows.append(_row(
        "R1", "existing and new multicast/broadcast services", n_services > 0 or bool(sc.multicast),
        c.get("services_rejected", 0) == 0,
        f"{c.get('services_admitted', 0)} admitted, {c.get('services_rejected', 0)} rejected, "
        f"{c.get('multicast_delivered', 0)} multicast deliveries",
    ))

    inactive_ok = all(
        ctx.rbma_id is None or ctx.serving_cell in result.registry.cells_of(ctx.rbma_id)
        for ctx in result.contexts.values()
    )
    rows.append(_row(
        "R2", "dynamic adjustment of the multicast/broadcast area",
        c.get("reselections", 0) > 0, inactive_ok,
        f"{c.get('reselections_in_rbma', 0)} signal-free reselections, {c.get('rbma_updates', 0)} RBMA updates, "
        f"{c.get('area_setups', 0)} area setups",
    ))

    bcast = [f["broadcast"] for f in multiplex_report(result.frames)["cells"].values()]
    rows.append(_row(
        "R3", "static and dynamic resource split up to a dedicated carrier", n_services > 0, True,
        f"admission safety re-checked; peak broadcast share {max(bcast, default=0.0):.3f}",
    ))

    sliced = [r for r in rbmas if r.slice_tag]
    rows.append(_row(
        "R4", "network sharing through sliced areas", bool(sliced), True,
        f"{len(sliced)} sliced RBMAs with disjoint reservations",
    ))

    periods = c.get("sfn_periods", 0)
    rows.append(_row(
        "R5", "large-area SFN with synchronised transmission", periods > 0, c.get("sfn_misaligned", 0) == 0,
        f"{c.get('sfn_aligned', 0)}/{periods} periods aligned, {c.get('sfn_muted_cells', 0)} muted cell-periods",
    ))

    rows.append(_row(
        "R6", "fixed, portable and mobile UEs including receive-only", bool(result.contexts),
        c.get("rom_uplink_messages", 0) == 0,
        f"{c.get('rom_uplink_messages', 0)} receive-only uplink messages, "
        f"{c.get('ues_covered_by_sfn', 0)} UEs under SFN coverage",
    ))
    rows.append(_row("R7", "reuse of RAN equipment and multi-antenna capabilities", False, None,
                     "architectural, not simulated"))
    rows.append(_row("R8", "services for mMTC devices", False, None, "architectural, not simulated"))

    if latency is not None:
        flags = [latency[k] for k in ("cp_meets_target", "up_meets_target") if latency[k] is not None]
        if latency["resume_below_setup"] is not None:
            flags.append(latency["resume_below_setup"])
        rows.append(_row(
            "L1", "control and user plane latency targets", bool(flags), all(flags),
            f"cp max {latency['cp']['max']} us, up max {latency['up']['max']} us, "
            f"resume below setup: {latency['resume_below_setup']}",
        ))
    return rows


def build_report(result: RunResult) -> dict[str, Any]:
    try:
        latency = latency_report(result)
    except InsufficientSamples:
        latency = None
    mux = multiplex_report(result.frames, result.registry)
    reuse = None
    if result.reuse3 is not None:
        reuse = {
            "partition": {str(k): v for k, v in sorted(result.reuse3.partition.items())},
            "partitions_used": result.reuse3.partitions_used,
            "edges": [list(e) for e in result.reuse3.edges],
            "slots": {str(k): sorted(w.slot_pattern) for k, w in sorted(result.reuse3.assignment.items())},
        }
    rows = requirement_rows(result, latency)
    return {
        "scenario": result.scenario.name,
        "seed": result.seed,
        "events": result.events,
        "passed": all(r["status"] != "fail" for r in rows),
        "requirements": rows,
        "latency": latency,
        "admission": result.admission,
        "sync_streams": result.streams,
        "rbmas": [
            {"id": r.rbma_id, "mode": r.mode.value, "cells": list(result.registry.cells_of(r.rbma_id)),
             "slice_tag": r.slice_tag}
            for r in result.registry.rbmas
        ],
        "final_states": {str(u): c.rrc_state.value for u, c in sorted(result.contexts.items())},
        "uplink_messages": {str(u): c.uplink_messages for u, c in sorted(result.contexts.items())},
        "messages": result.messages,
        "multiplex": {
            "cells": {str(k): v for k, v in mux["cells"].items()},
            "tdm": {str(k): {str(s): ids for s, ids in v.items()} for k, v in mux.get("tdm", {}).items()},
        },
        "reuse3": reuse,
        "metrics": result.metrics.as_dict(),
    }


def _write_csv(path: Path, header: Iterable[str], rows: Iterable[tuple]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def summary_text(report: Mapping[str, Any]) -> str:
    lines = [
        f"scenario: {report['scenario']}",
        f"seed: {report['seed']}",
        f"events: {report['events']}",
        f"messages: sent {report['messages']['sent']}, delivered {report['messages']['delivered']}, "
        f"dropped {report['messages']['dropped']}",
        f"result: {'PASS' if report['passed'] else 'FAIL'}",
        "",
        "requirements:",
    ]
    for r in report["requirements"]:
        lines.append(f"  {r['id']:<3} {r['status']:<4} {r['requirement']} ({r['evidence']})")
    lat = report.get("latency")
    if lat:
        lines += ["", "latency (us):"]
        for key in ("cp", "resume", "up"):
            s = lat.get(key)
            if s:
                lines.append(f"  {key:<6} n={s['n']} min={s['min']} mean={s['mean']:.1f} max={s['max']}")
    counters = report["metrics"]["counters"]
    if counters:
        lines += ["", "counters:"]
        lines += [f"  {k} = {v}" for k, v in counters.items()]
    return "\n".join(lines) + "\n"


def emit_report(result: RunResult, out_dir: str | Path) -> dict[str, Any]:
    """Write summary, JSON report, CSV logs and the frame dump into ``out_dir``."""
    out = Path(out_dir)
    report = build_report(result)
    m = result.metrics
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / REPORT_FILE).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        (out / "summary.txt").write_text(summary_text(report))
        _write_csv(out / "emission_log.csv", EMISSION_COLUMNS, m.rows("emission"))
        _write_csv(out / "decision_log.csv", DECISION_COLUMNS, m.rows("decision"))
        _write_csv(out / "state_log.csv", STATE_COLUMNS, m.rows("state"))
        _write_csv(out / "alignment_log.csv", ALIGNMENT_COLUMNS, m.rows("alignment"))
        _write_csv(out / "requirements.csv", ("id", "requirement", "status", "evidence"),
                   [(r["id"], r["requirement"], r["status"], r["evidence"]) for r in report["requirements"]])
        (out / "frames.txt").write_text("\n".join(f.dump() for f in result.frames) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write run artifacts to {out}: {exc}") from None
    return report


def load_report(run_dir: str | Path) -> dict[str, Any]:
    path = Path(run_dir) / REPORT_FILE
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise SchemaError(f"no run report at {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from None
