"""Trace monitor: replays an event log and reports invariant violations.

Works only from the log entries and a map of storage-element kinds, never
from live subsystem state, so it can judge traces produced by any run or
written by hand.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable

from .simgrid import EventLogEntry

_STARTS = {
    "ARCHIVE_DONE": "ARCHIVE_START",
    "RESTORE_DONE": "RESTORE_START",
    "SHIP_DONE": "SHIP_START",
    "MERGE_DONE": "MERGE_START",
    "JOB_DONE": "JOB_START",
}


def check_trace(log: Iterable[EventLogEntry], rse_kinds: dict[str, str]) -> list[str]:
    buffers = {r for r, k in rse_kinds.items() if k == "BUFFER"}
    disks = {r for r, k in rse_kinds.items() if k == "DISK"}
    bad: list[str] = []
    replicas: dict[tuple[str, str], str] = {}
    tape_ok: dict[str, bool] = {}
    started: dict[str, int] = defaultdict(int)
    job_starts: dict[str, int] = defaultdict(int)
    dag_info: dict[str, dict] = {}
    done_chunks: dict[str, set] = defaultdict(set)
    last_done: dict[str, int] = {}
    last_t = None

    def holders(ds: str, pool: set[str]) -> list[str]:
        return [r for (d, r), st in replicas.items() if d == ds and st == "AVAILABLE" and r in pool]

    for e in log:
        if last_t is not None and e.time < last_t:
            bad.append(f"t={e.time}: log goes backwards (previous {last_t})")
        last_t = e.time
        d, kind = e.detail, e.kind

        if kind.endswith("_START"):
            started[f"{kind}:{e.subject}"] += 1
        want = _STARTS.get(kind)
        if want and started[f"{want}:{e.subject}"] == 0:
            bad.append(f"t={e.time}: {kind} {e.subject} without {want}")

        if kind == "REGISTER":
            replicas[(e.subject, d["rse"])] = "AVAILABLE"
        elif kind == "TRANSFER_START":
            replicas[(e.subject, d["dst"])] = "COPYING"
        elif kind == "TRANSFER_DONE":
            if replicas.get((e.subject, d["dst"])) != "COPYING":
                bad.append(f"t={e.time}: TRANSFER_DONE {e.subject}->{d['dst']} without TRANSFER_START")
            replicas[(e.subject, d["dst"])] = "AVAILABLE"
        elif kind == "TRANSFER_FAIL":
            if replicas.get((e.subject, d["dst"])) == "COPYING":
                replicas[(e.subject, d["dst"])] = "CORRUPT"
        elif kind == "REPLICA_LOST":
            replicas[(e.subject, d["rse"])] = "CORRUPT"
        elif kind == "TAPE_VERIFY":
            tape_ok[e.subject] = bool(d["ok"])
        elif kind == "TAPE_CORRUPT":
            tape_ok[e.subject] = False
        elif kind == "PURGE":
            ds, rse = e.subject, d["rse"]
            offsite = [r for r in holders(ds, disks) if r != rse and r not in buffers]
            if not tape_ok.get(ds, False) or not offsite:
                bad.append(
                    f"t={e.time}: PURGE {ds}@{rse} with gate false "
                    f"(tape verified={tape_ok.get(ds, False)}, offsite={offsite})"
                )
            replicas[(ds, rse)] = "PURGED"
            if not holders(ds, disks | buffers) and not tape_ok.get(ds, False):
                bad.append(f"t={e.time}: PURGE {ds}@{rse} removed the last recoverable copy")
        elif kind == "DAG_SUBMIT":
            dag_info[e.subject] = d
        elif kind == "JOB_START":
            job_starts[e.subject] += 1
            info = dag_info.get(d["dag"])
            if info is not None and job_starts[e.subject] > info.get("max_retries", 0) + 1:
                bad.append(f"t={e.time}: {e.subject} started {job_starts[e.subject]} times")
        elif kind == "JOB_DONE":
            done_chunks[d["dag"]].add(e.subject)
            last_done[d["dag"]] = e.time
        elif kind in ("MERGE_START", "MERGE_DONE"):
            dag = d["dag"]
            info = dag_info.get(dag, {})
            if len(done_chunks[dag]) != info.get("chunks", -1):
                bad.append(f"t={e.time}: {kind} for {dag} before every chunk finished")
            if e.time < last_done.get(dag, 0):
                bad.append(f"t={e.time}: {kind} for {dag} precedes a chunk JOB_DONE")
    return bad
