"""Accounting and wall-hour reports, plus state dumps for the CLI."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timedelta
from decimal import Decimal
from typing import Iterable, Optional

from .metadb import Source
from .simgrid import EventLogEntry

MB = 10 ** 6


@dataclass(frozen=True)
class AccountingRow:
    source: str
    total: int  # bytes
    science: int


@dataclass
class AccountingReport:
    rows: list[AccountingRow]

    # totals are always derived from rows, never stored
    @property
    def grand_total(self) -> int:
        return sum(r.total for r in self.rows)

    @property
    def grand_science(self) -> int:
        return sum(r.science for r in self.rows)

    def row(self, source: Source | str) -> AccountingRow:
        name = Source(source).value
        return next(r for r in self.rows if r.source == name)

    def to_csv(self, unit: int = MB) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["source", "total_bytes", "science_bytes", "total", "science"])
        for r in self.rows:
            w.writerow([r.source, r.total, r.science, scaled(r.total, unit), scaled(r.science, unit)])
        w.writerow(["TOTAL", self.grand_total, self.grand_science,
                    scaled(self.grand_total, unit), scaled(self.grand_science, unit)])
        return buf.getvalue()


def scaled(n: int, unit: int = MB) -> str:
    """Exact decimal rendering of ``n / unit``."""
    q = Decimal(n) / Decimal(unit)
    return f"{q.normalize():f}" if q else "0"


def report_accounting(log: Iterable[EventLogEntry]) -> AccountingReport:
    total: dict[str, int] = defaultdict(int)
    sci: dict[str, int] = defaultdict(int)
    for e in log:
        if e.kind != "RUN_END":
            continue
        total[e.detail["source"]] += e.detail["size"]
        if e.detail["science"]:
            sci[e.detail["source"]] += e.detail["size"]
    return AccountingReport([AccountingRow(s.value, total[s.value], sci[s.value]) for s in Source])


@dataclass(frozen=True)
class WallRow:
    month: str
    site: str
    pool: str
    seconds: int

    @property
    def wall_hours(self) -> Decimal:
        return Decimal(self.seconds) / Decimal(3600)


def month_of(epoch: str, t: int) -> str:
    return (datetime.fromisoformat(epoch) + timedelta(seconds=t)).strftime("%Y-%m")


def wall_hours_from_jobs(jobs: Iterable, epoch: str) -> list[WallRow]:
    """Aggregate (site, pool, start, runtime) job records by start month."""
    acc: dict[tuple[str, str, str], int] = defaultdict(int)
    for j in jobs:
        acc[(month_of(epoch, j.start), j.site, j.pool)] += j.runtime
    return [WallRow(m, s, p, sec) for (m, s, p), sec in sorted(acc.items())]


@dataclass(frozen=True)
class _Job:
    site: str
    pool: str
    start: int
    runtime: int


def jobs_from_log(log: Iterable[EventLogEntry]) -> list[_Job]:
    dags: dict[str, dict] = {}
    jobs = []
    for e in log:
        if e.kind == "DAG_SUBMIT":
            dags[e.subject] = e.detail
        elif e.kind in ("JOB_DONE", "JOB_FAIL", "MERGE_DONE"):
            info = dags[e.detail["dag"]]
            rt = e.detail["runtime"]
            jobs.append(_Job(info["site"], info["pool"], e.time - rt, rt))
    return jobs


def wall_hours_csv(rows: list[WallRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["month", "site", "pool", "wall_hours"])
    for r in rows:
        w.writerow([r.month, r.site, r.pool, f"{r.wall_hours:.6f}"])
    return buf.getvalue()


def replicas_json(dump: dict) -> str:
    return json.dumps(dump, sort_keys=True, indent=2) + "\n"


def read_log(path) -> list[EventLogEntry]:
    with open(path) as fh:
        return [EventLogEntry.from_json(line) for line in fh if line.strip()]


def verify_tape_lines(datasets: Iterable[str], status_of) -> list[str]:
    return [f"{ds} {status_of(ds)}" for ds in sorted(datasets)]


def occupancy_series(log: Iterable[EventLogEntry], buffer_id: str) -> list[tuple[int, int]]:
    """(time, bytes on buffer) after every change, rebuilt from the log."""
    used = 0
    out: list[tuple[int, int]] = []
    for e in log:
        delta: Optional[int] = None
        if e.kind == "REGISTER" and e.detail.get("rse") == buffer_id:
            delta = e.detail["size"]
        elif e.kind == "PURGE" and e.detail.get("rse") == buffer_id:
            delta = -e.detail["size"]
        if delta is not None:
            used += delta
            out.append((e.time, used))
    return out
