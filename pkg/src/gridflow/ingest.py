"""DAQ front end: turns the run plan into runs landing on the LNGS buffer.

Each run takes one simulated hour. On arrival it is registered in the catalog
at the buffer RSE and queued for tape, two independent paths started in the
same event. If a run would not fit on the buffer, data taking halts until
occupancy drops below the resume threshold; runs missed meanwhile are logged
as skipped, never dropped silently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .catalog import Catalog, Dataset, ReplicaState
from .errors import FlowError
from .metadb import MetaDB, RunRecord, RunStatus, Source
from .pipeline import chunk_run
from .policy import Policy
from .simgrid import DAY, HOUR, World
from .tapestore import TapeStore

RUN_LENGTH = HOUR


@dataclass
class RunPlanEntry:
    source: Source
    science: bool
    events_per_run: int
    bytes_per_event: int
    runs_per_day: Optional[float] = None
    at: Optional[list[int]] = None  # explicit start offsets from plan start

    def __post_init__(self) -> None:
        self.source = Source(self.source)
        if self.events_per_run <= 0 or self.bytes_per_event <= 0:
            raise FlowError("INVALID_PLAN", f"{self.source.value}: sizes must be positive")
        if (self.runs_per_day is None) == (self.at is None):
            raise FlowError("INVALID_PLAN", f"{self.source.value}: give exactly one of runs_per_day / at")
        if self.runs_per_day is not None and self.runs_per_day <= 0:
            raise FlowError("INVALID_PLAN", f"{self.source.value}: runs_per_day must be positive")

    @property
    def run_size(self) -> int:
        return self.events_per_run * self.bytes_per_event


@dataclass
class RunPlan:
    entries: list[RunPlanEntry] = field(default_factory=list)
    start: int = 0
    duration: int = DAY

    def schedule(self) -> list[tuple[int, int]]:
        """(start time, entry index) for every planned run, in firing order."""
        out = []
        for i, e in enumerate(self.entries):
            if e.at is not None:
                out.extend((self.start + t, i) for t in e.at)
            else:
                step = max(1, round(DAY / e.runs_per_day))
                out.extend((t, i) for t in range(self.start, self.start + self.duration, step))
        return sorted(out)


@dataclass
class BufferState:
    capacity: int
    used: int
    halted: bool


class Ingest:
    def __init__(self, world: World, catalog: Catalog, metadb: MetaDB, tape: TapeStore,
                 policy: Policy, lifetime: Optional[int] = 4 * DAY, chunk_size: int = 100,
                 resume_fraction: float = 0.9):
        self.world = world
        self.catalog = catalog
        self.metadb = metadb
        self.tape = tape
        self.policy = policy
        self.lifetime = lifetime
        self.chunk_size = chunk_size
        self.resume_fraction = resume_fraction
        self.halted = False
        self.reserved = 0
        self.skipped = 0
        self.taken = 0
        self.ingested: dict[tuple[str, bool], int] = {}

    @property
    def buffer(self):
        return self.world.buffer

    def state(self) -> BufferState:
        return BufferState(self.buffer.capacity, self.buffer.used + self.reserved, self.halted)

    def start(self, plan: RunPlan) -> None:
        for t, i in plan.schedule():
            entry = plan.entries[i]
            self.world.schedule(t, lambda entry=entry: self.take_run(entry))

    def take_run(self, entry: RunPlanEntry, at: Optional[int] = None) -> Optional[RunRecord]:
        if at is not None and at != self.world.now:
            raise FlowError("SCHEDULE_IN_PAST" if at < self.world.now else "NOT_NOW", f"take_run at {at}")
        size = entry.run_size
        if self.halted:
            self.skipped += 1
            self.world.emit("RUN_SKIPPED", entry.source.value, size=size)
            return None
        if self.state().used + size > self.buffer.capacity:
            self.halted = True
            self.skipped += 1
            self.world.emit("HALT", self.buffer.id, used=self.state().used, incoming=size)
            self.world.emit("RUN_SKIPPED", entry.source.value, size=size)
            return None
        self.reserved += size
        run_id = f"run_{self.taken:06d}"
        self.taken += 1
        record = RunRecord(run_id, entry.source, entry.science, entry.events_per_run, size,
                           started_at=self.world.now)
        self.metadb.insert(record)
        self.world.emit("RUN_START", run_id, source=entry.source.value, science=entry.science)
        self.world.after(RUN_LENGTH, lambda: self._arrive(record))
        return record

    def _arrive(self, record: RunRecord) -> None:
        self.reserved -= record.size
        key = (record.source.value, record.science)
        self.ingested[key] = self.ingested.get(key, 0) + record.size
        chunks = chunk_run(record, self.chunk_size)
        ds = Dataset(
            id=record.run_id,
            run_id=record.run_id,
            size=record.size,
            chunk_ids=[c.id for c in chunks],
            chunk_sizes=[c.size for c in chunks],
            source=record.source.value,
            science=record.science,
        )
        self.metadb.set_status(record.run_id, RunStatus.ON_BUFFER)
        self.world.emit("RUN_END", record.run_id, source=record.source.value,
                        science=record.science, size=record.size, events=record.event_count)
        self.catalog.register(ds, self.buffer.id, self.lifetime)
        self.tape.archive(ds.id)

    def check_resume(self) -> None:
        if self.halted and self.state().used < self.resume_fraction * self.buffer.capacity:
            self.halted = False
            self.world.emit("RESUME", self.buffer.id, used=self.state().used)

    def drain_check(self, now: Optional[int] = None) -> dict:
        """Buffer occupancy plus the runs whose buffer copy could be purged now."""
        st = self.state()
        eligible = []
        for ds_id in sorted(self.catalog.datasets):
            rep = self.catalog.replica(ds_id, self.buffer.id)
            if rep is None or rep.state is not ReplicaState.AVAILABLE:
                continue
            if self.policy.purge_eligible(ds_id, self.buffer.id):
                eligible.append(ds_id)
        return {"time": self.world.now if now is None else now, "used": st.used,
                "capacity": st.capacity, "halted": st.halted, "purge_eligible": eligible}
