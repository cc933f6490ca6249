"""Command line: ``validate``, ``run`` and ``report``.

Exit codes: 0 pass, 1 invariant violation or failed requirement, 2 input error.
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from ..errors import InputError, IoFailure, RuntimeInvariantViolation
from .report import emit_report, load_report, summary_text
from .scenario import load_scenario
from .simulation import Simulation

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ranbcast", description="NG-RAN broadcast/multicast simulator")
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="check a scenario file without running it")
    v.add_argument("scenario")
    r = sub.add_parser("run", help="run a scenario and write artifacts")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--out", required=True, help="output directory")
    rep = sub.add_parser("report", help="print the summary of a finished run")
    rep.add_argument("dir")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "validate":
            sc = load_scenario(args.scenario)
            sim = Simulation(sc)
            print(f"OK {sc.name}: {len(sim.t.cells)} cells, {len(sim.t.dus)} DUs, {len(sim.t.cus)} CUs, "
                  f"{len(sim.registry.rbmas)} RBMAs, {len(sc.services)} services, {len(sc.ues)} UEs")
            return EXIT_OK
        if args.command == "run":
            sc = load_scenario(args.scenario)
            result = Simulation(sc, args.seed).run()
            report = emit_report(result, args.out)
            sys.stdout.write(summary_text(report))
            return EXIT_OK if report["passed"] else EXIT_FAIL
        report = load_report(args.dir)
        sys.stdout.write(summary_text(report))
        return EXIT_OK if report["passed"] else EXIT_FAIL
    except RuntimeInvariantViolation as exc:
        print(f"invariant violation: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (InputError, IoFailure) as exc:
        print(f"input error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
