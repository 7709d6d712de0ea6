"""Data-safety levels and the purge gate.

Science runs need a copy at the US dCache endpoint, one European disk copy and
a verified tape copy; everything else needs the European copy and the tape.
:meth:`Policy.purge` is the only way a replica is ever deleted.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .catalog import Catalog, Replica, ReplicaState
from .errors import FlowError
from .metadb import RunRecord
from .simgrid import HOUR, Kind, Region, World
from .tapestore import TapeStore


class Category(str, enum.Enum):
    SCIENCE = "SCIENCE"
    NON_SCIENCE = "NON_SCIENCE"


def classify(run: RunRecord) -> Category:
    return Category.SCIENCE if run.science else Category.NON_SCIENCE


@dataclass(frozen=True)
class SafetySpec:
    require_specific: Optional[str]
    require_region_copies: tuple[Region, int] = (Region.EUROPE, 1)
    require_verified_tape: bool = True


@dataclass
class SafetyReport:
    dataset_id: str
    missing: list[str] = field(default_factory=list)

    @property
    def satisfied(self) -> bool:
        return not self.missing


@dataclass
class Eligibility:
    eligible: bool
    reasons: list[str]

    def __bool__(self) -> bool:
        return self.eligible


# purge refusal reasons
TAPE_UNVERIFIED = "TAPE_UNVERIFIED"
NO_OFFSITE_COPY = "NO_OFFSITE_COPY"
NOT_BUFFER_RSE = "NOT_BUFFER_RSE"
COPY_IN_PROGRESS = "COPY_IN_PROGRESS"
NO_REPLICA = "NO_REPLICA"


class Policy:
    def __init__(self, world: World, catalog: Catalog, tape: TapeStore,
                 dcache_rse: str = "UC_DCACHE", retry_interval: int = 6 * HOUR):
        self.world = world
        self.catalog = catalog
        self.tape = tape
        self.dcache_rse = dcache_rse
        self.retry_interval = retry_interval
        self._retrying: set[tuple[str, str]] = set()

    def spec_for(self, science: bool) -> SafetySpec:
        return SafetySpec(self.dcache_rse if science else None)

    def check_safety(self, dataset_id: str) -> SafetyReport:
        ds = self.catalog.datasets.get(dataset_id)
        if ds is None:
            raise FlowError("UNKNOWN_DATASET", dataset_id)
        spec = self.spec_for(ds.science)
        have = set(self.catalog.available_at(dataset_id))
        report = SafetyReport(dataset_id)
        if spec.require_specific and spec.require_specific not in have:
            report.missing.append(f"{spec.require_specific} copy")
        region, count = spec.require_region_copies
        in_region = sum(1 for r in self.world.disk_rses(region) if r.id in have)
        if in_region < count:
            report.missing.append(f"{region.value} copy")
        record = self.tape.records.get(dataset_id)
        if spec.require_verified_tape and not (record and record.archived and record.verified):
            report.missing.append("verified tape")
        return report

    def purge_eligible(self, dataset_id: str, rse: str, override: bool = False) -> Eligibility:
        rep = self.catalog.replica(dataset_id, rse)
        if rep is None or rep.state is ReplicaState.PURGED:
            raise FlowError("NO_REPLICA_AT_RSE", f"{dataset_id} @ {rse}")
        reasons = []
        buffer_id = self.world.buffer.id
        if rse != buffer_id and not override:
            reasons.append(NOT_BUFFER_RSE)
        if rep.state is ReplicaState.COPYING:
            reasons.append(COPY_IN_PROGRESS)
        record = self.tape.records.get(dataset_id)
        if record is None or not record.archived or not self.tape.verify(dataset_id):
            reasons.append(TAPE_UNVERIFIED)
        offsite = [
            r for r in self.catalog.available_at(dataset_id)
            if r not in (buffer_id, rse) and self.world.rses[r].kind is Kind.DISK
        ]
        if not offsite:
            reasons.append(NO_OFFSITE_COPY)
        return Eligibility(not reasons, reasons)

    def purge(self, dataset_id: str, rse: str, override: bool = False) -> Replica:
        """Delete one replica if, and only if, the gate holds right now."""
        try:
            verdict = self.purge_eligible(dataset_id, rse, override)
        except FlowError as exc:
            if exc.code != "NO_REPLICA_AT_RSE":
                raise
            verdict = Eligibility(False, [NO_REPLICA])
        if not verdict:
            raise FlowError("PURGE_REFUSED", f"{dataset_id} @ {rse}: {', '.join(verdict.reasons)}",
                            reasons=verdict.reasons)
        return self._delete(dataset_id, rse)

    def _delete(self, dataset_id: str, rse: str) -> Replica:
        size = self.catalog.datasets[dataset_id].size
        self.world.emit("PURGE", dataset_id, rse=rse, size=size)
        return self.catalog.mark_purged(dataset_id, rse)

    def force_purge(self, dataset_id: str, rse: str) -> Optional[Replica]:
        """Delete without consulting the gate. Exists only to prove the trace monitor trips."""
        rep = self.catalog.replica(dataset_id, rse)
        if rep is None or rep.state is ReplicaState.PURGED:
            return None
        return self._delete(dataset_id, rse)

    # -- expiry sweep --------------------------------------------------------

    def on_expire(self, rep: Replica) -> None:
        key = (rep.dataset_id, rep.rse)
        self._retrying.discard(key)
        if rep.state is not ReplicaState.AVAILABLE:
            return
        try:
            self.purge(rep.dataset_id, rep.rse)
        except FlowError as exc:
            if exc.code != "PURGE_REFUSED":
                raise
            if NO_REPLICA in exc.detail["reasons"]:
                return
            self.world.emit("PURGE_DEFERRED", rep.dataset_id, rse=rep.rse, reasons=exc.detail["reasons"])
            self._retrying.add(key)
            self.world.after(self.retry_interval, lambda: key in self._retrying and self._retry(rep))

    def _retry(self, rep: Replica) -> None:
        if self.catalog.replica(rep.dataset_id, rep.rse) is not rep:
            self._retrying.discard((rep.dataset_id, rep.rse))
            return
        self.on_expire(rep)
