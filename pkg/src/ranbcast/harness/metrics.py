"""Append-only run metrics."""

from __future__ import annotations

from collections import defaultdict
from typing import Any

EMISSION_COLUMNS = ("du_id", "period", "emission_time_us", "content_hash", "muted_flag", "sync_sequence", "packet_number")
DECISION_COLUMNS = ("time_us", "xrb_id", "ue_id", "assignment", "reason")
STATE_COLUMNS = ("time_us", "ue_id", "from", "to", "trigger", "uplink_msg_count")
ALIGNMENT_COLUMNS = ("service", "period", "time_us", "verdict", "muted_cells", "deviating_cells", "detail")


class MetricsStore:
    """Counters, logs and latency samples collected during one run.

    Everything is append-only: rows are added, counters only go up.
    """

    def __init__(self) -> None:
        self.counters: dict[str, int] = defaultdict(int)
        self.logs: dict[str, list[tuple]] = defaultdict(list)
        self.samples: dict[str, list[int]] = defaultdict(list)

    def incr(self, name: str, n: int = 1) -> None:
        if n < 0:
            raise ValueError("counters only increase")
        self.counters[name] += n

    def log(self, name: str, row: tuple) -> None:
        self.logs[name].append(tuple(row))

    def sample(self, name: str, value_us: int) -> None:
        self.samples[name].append(int(value_us))

    def counter(self, name: str) -> int:
        return self.counters.get(name, 0)

    def rows(self, name: str) -> list[tuple]:
        return list(self.logs.get(name, ()))

    def as_dict(self) -> dict[str, Any]:
        return {
            "counters": dict(sorted(self.counters.items())),
            "samples": {k: list(v) for k, v in sorted(self.samples.items())},
            "log_sizes": {k: len(v) for k, v in sorted(self.logs.items())},
        }
