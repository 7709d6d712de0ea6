"""Run meta-database with lagging read-only mirrors."""

from __future__ import annotations

import copy
import enum
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .errors import FlowError
from .simgrid import World


class Source(str, enum.Enum):
    DARK_MATTER = "DARK_MATTER"
    LED = "LED"
    CS137 = "CS137"
    KR83M = "KR83M"
    RN220 = "RN220"
    AMBE241 = "AMBE241"
    TH228 = "TH228"
    NEUTRON_GENERATOR = "NEUTRON_GENERATOR"
    MUON_VETO = "MUON_VETO"


class RunStatus(str, enum.Enum):
    TAKING = "TAKING"
    ON_BUFFER = "ON_BUFFER"
    DISTRIBUTING = "DISTRIBUTING"
    SAFE = "SAFE"
    PROCESSED = "PROCESSED"
    PURGED_FROM_LNGS = "PURGED_FROM_LNGS"

    @property
    def rank(self) -> int:
        return _ORDER.index(self)


_ORDER = list(RunStatus)

TAPE = "TAPE"
RCC = "RCC"


@dataclass
class RunRecord:
    run_id: str
    source: Source
    science: bool
    event_count: int
    size: int
    status: RunStatus = RunStatus.TAKING
    locations: set[str] = field(default_factory=set)
    started_at: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "source": self.source.value,
            "science": self.science,
            "event_count": self.event_count,
            "size": self.size,
            "status": self.status.value,
            "locations": sorted(self.locations),
            "started_at": self.started_at,
        }


@dataclass
class MirrorState:
    mirror_id: str
    lag: int
    last_applied: int = 0
    records: dict[str, RunRecord] = field(default_factory=dict)


@dataclass(frozen=True)
class _Op:
    seq: int
    time: int
    kind: str
    run_id: str
    value: Any


def _apply(records: dict[str, RunRecord], op: _Op) -> None:
    if op.kind == "insert":
        records[op.run_id] = copy.deepcopy(op.value)
    elif op.kind == "add":
        records[op.run_id].locations.add(op.value)
    elif op.kind == "remove":
        records[op.run_id].locations.discard(op.value)
    elif op.kind == "status":
        records[op.run_id].status = op.value


class MetaDB:
    def __init__(self, world: World, mirror_lags: Optional[dict[str, int]] = None):
        self.world = world
        self.records: dict[str, RunRecord] = {}
        self.seq = 0
        self.oplog: list[_Op] = []
        self.mirrors = {m: MirrorState(m, lag) for m, lag in sorted((mirror_lags or {}).items())}
        self.location_listeners: list[Callable[[RunRecord, str], None]] = []

    def _commit(self, kind: str, run_id: str, value: Any) -> int:
        self.seq += 1
        op = _Op(self.seq, self.world.now, kind, run_id, copy.deepcopy(value))
        self.oplog.append(op)
        if kind != "insert":
            _apply(self.records, op)
        return self.seq

    def insert(self, record: RunRecord) -> int:
        if record.run_id in self.records:
            raise FlowError("DUPLICATE_RUN", record.run_id)
        self.records[record.run_id] = record
        return self._commit("insert", record.run_id, record)

    def get(self, run_id: str) -> RunRecord:
        try:
            return self.records[run_id]
        except KeyError:
            raise FlowError("UNKNOWN_RUN", run_id) from None

    def upsert_location(self, run_id: str, location: str) -> int:
        rec = self.get(run_id)
        if "minitree" in location.lower():
            raise FlowError("ILLEGAL_LOCATION", "minitrees are not tracked")
        if location == RCC and rec.status.rank < RunStatus.PROCESSED.rank:
            raise FlowError("ILLEGAL_LOCATION", f"{run_id}: RCC before PROCESSED")
        if location in rec.locations:
            return self.seq
        seq = self._commit("add", run_id, location)
        for fn in self.location_listeners:
            fn(rec, location)
        return seq

    def remove_location(self, run_id: str, location: str) -> int:
        rec = self.get(run_id)
        if location not in rec.locations:
            return self.seq
        return self._commit("remove", run_id, location)

    def set_status(self, run_id: str, status: RunStatus) -> RunRecord:
        rec = self.get(run_id)
        status = RunStatus(status)
        if status.rank < rec.status.rank:
            raise FlowError("ILLEGAL_TRANSITION", f"{run_id}: {rec.status.value} -> {status.value}")
        if status is not rec.status:
            self._commit("status", run_id, status)
            self.world.emit("STATUS", run_id, status=status.value)
        return rec

    def advance(self, run_id: str, status: RunStatus) -> bool:
        """Move forward to ``status`` if that is not a step back; report whether it moved."""
        rec = self.get(run_id)
        if status.rank <= rec.status.rank:
            return False
        self.set_status(run_id, status)
        return True

    # -- reads ---------------------------------------------------------------

    def mirror(self, mirror_id: str) -> MirrorState:
        m = self.mirrors[mirror_id]
        horizon = self.world.now - m.lag
        for op in self.oplog[m.last_applied:]:
            if op.time > horizon:
                break
            _apply(m.records, op)
            m.last_applied = op.seq
        return m

    def query(self, predicate: Optional[Callable[[RunRecord], bool]] = None,
              instance: str = "primary", **fields: Any) -> list[RunRecord]:
        """Records matching ``predicate`` and every ``field=value`` filter.

        ``instance`` is ``"primary"`` or a mirror id; mirrors only reflect
        commits at least their lag old.
        """
        records = self.records if instance == "primary" else self.mirror(instance).records

        def ok(rec: RunRecord) -> bool:
            for name, want in fields.items():
                have = getattr(rec, name)
                if isinstance(have, enum.Enum):
                    have = have.value
                    want = want.value if isinstance(want, enum.Enum) else want
                if have != want:
                    return False
            return predicate is None or predicate(rec)

        return [rec for _, rec in sorted(records.items()) if ok(rec)]

    def dump_lines(self, instance: str = "primary") -> list[str]:
        return [json.dumps(r.to_dict(), sort_keys=True) for r in self.query(instance=instance)]
