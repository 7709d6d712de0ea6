"""Replica catalog and transfer-rule engine.

Tracks raw-data replicas across storage elements, turns declarative transfer
rules into transfers, and schedules replica expiry. It never deletes a replica
on its own: expiry only produces candidates, deletion goes through
:mod:`gridflow.policy`.
"""

from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import FlowError
from .simgrid import BLOCKED, Kind, Region, World


class Stage(str, enum.Enum):
    RAW = "RAW"
    PROCESSED = "PROCESSED"
    MINITREE = "MINITREE"


class ReplicaState(str, enum.Enum):
    COPYING = "COPYING"
    AVAILABLE = "AVAILABLE"
    CORRUPT = "CORRUPT"
    PURGED = "PURGED"


def canonical_checksum(run_id: str, chunk_ids: list[str], size: int, nonce: int = 0) -> int:
    """CRC-32 over the dataset's identity fields."""
    payload = f"{run_id}|{','.join(chunk_ids)}|{size}|{nonce}".encode()
    return zlib.crc32(payload) & 0xFFFFFFFF


def corrupted(checksum: int) -> int:
    return checksum ^ 0x1


@dataclass
class Dataset:
    id: str
    run_id: str
    size: int
    chunk_ids: list[str]
    chunk_sizes: list[int]
    stage: Stage = Stage.RAW
    source: str = ""
    science: bool = False
    checksum: int = 0

    def __post_init__(self) -> None:
        if sum(self.chunk_sizes) != self.size:
            raise FlowError("INVALID_DATASET", f"{self.id}: chunk sizes do not sum to size")
        if len(self.chunk_ids) != len(self.chunk_sizes):
            raise FlowError("INVALID_DATASET", f"{self.id}: chunk ids/sizes length mismatch")
        if not self.checksum:
            self.checksum = canonical_checksum(self.run_id, self.chunk_ids, self.size)


@dataclass
class Replica:
    dataset_id: str
    rse: str
    state: ReplicaState
    checksum: int
    created_at: int
    size: int
    lifetime: Optional[int] = None

    @property
    def expires_at(self) -> Optional[int]:
        return None if self.lifetime is None else self.created_at + self.lifetime

    def to_dict(self) -> dict:
        return {
            "rse": self.rse,
            "state": self.state.value,
            "checksum": self.checksum,
            "created_at": self.created_at,
            "lifetime": self.lifetime,
        }


@dataclass(frozen=True)
class Selector:
    """Dataset predicate. ``None`` fields match anything."""

    science: Optional[bool] = None
    sources: Optional[frozenset[str]] = None

    def matches(self, ds: Dataset) -> bool:
        if self.science is not None and ds.science != self.science:
            return False
        if self.sources is not None and ds.source not in self.sources:
            return False
        return True


@dataclass(frozen=True)
class Destination:
    kind: str  # "SPECIFIC" | "RANDOM_IN_REGION"
    target: str

    @classmethod
    def specific(cls, rse: str) -> "Destination":
        return cls("SPECIFIC", rse)

    @classmethod
    def random_in_region(cls, region: Region | str) -> "Destination":
        return cls("RANDOM_IN_REGION", Region(region).value)


@dataclass
class TransferRule:
    selector: Selector
    destination: Destination
    copies: int = 1
    lifetime: Optional[int] = None
    id: str = ""


@dataclass(frozen=True)
class TransferRequest:
    dataset_id: str
    src: Optional[str]
    dst: str
    rule_id: str


Listener = Callable[[Replica, Optional[ReplicaState]], None]

_HOLDING = (ReplicaState.AVAILABLE, ReplicaState.COPYING)


class Catalog:
    def __init__(self, world: World, transfer_corrupt_prob: float = 0.0, auto_apply: bool = True):
        self.world = world
        self.datasets: dict[str, Dataset] = {}
        self.by_run: dict[str, str] = {}
        self._replicas: dict[str, dict[str, Replica]] = {}
        self.rules: dict[str, TransferRule] = {}
        self.listeners: list[Listener] = []
        self.expiry_listeners: list[Callable[[Replica], None]] = []
        self.transfer_corrupt_prob = transfer_corrupt_prob
        self.auto_apply = auto_apply
        # random destination picks, held until acted on so evaluation is idempotent
        self._picks: dict[tuple, str] = {}

    # -- registration --------------------------------------------------------

    def register(self, dataset: Dataset, at_rse: str, lifetime: Optional[int] = None) -> Replica:
        if dataset.id in self.datasets:
            raise FlowError("DUPLICATE_DATASET", dataset.id)
        if dataset.stage is not Stage.RAW:
            raise FlowError("INVALID_DATASET", f"{dataset.id}: only raw data is catalogued")
        rse = self._rse(at_rse)
        rse.reserve(dataset.size)
        self.datasets[dataset.id] = dataset
        self.by_run[dataset.run_id] = dataset.id
        rep = Replica(dataset.id, at_rse, ReplicaState.AVAILABLE, dataset.checksum,
                      self.world.now, dataset.size, lifetime)
        self._replicas[dataset.id] = {at_rse: rep}
        self.world.emit("REGISTER", dataset.id, rse=at_rse, size=dataset.size)
        self._schedule_expiry(rep)
        self._changed(rep, None)
        return rep

    def declare_rule(self, rule: TransferRule) -> str:
        if rule.copies < 1:
            raise FlowError("INVALID_RULE", "copies must be >= 1")
        dest = rule.destination
        if dest.kind == "SPECIFIC":
            rse = self.world.rses.get(dest.target)
            if rse is None or rse.kind is not Kind.DISK:
                raise FlowError("INVALID_RULE", f"{dest.target} is not a disk RSE")
        elif dest.kind == "RANDOM_IN_REGION":
            Region(dest.target)
        else:
            raise FlowError("INVALID_RULE", f"unknown destination kind {dest.kind}")
        if not rule.id:
            rule.id = f"rule-{len(self.rules)}"
        if rule.id in self.rules:
            raise FlowError("INVALID_RULE", f"duplicate rule id {rule.id}")
        self.rules[rule.id] = rule
        if self.auto_apply:
            for ds_id in list(self.datasets):
                self.apply_rules(ds_id)
        return rule.id

    # -- rule engine ---------------------------------------------------------

    def evaluate_rules(self, dataset_id: str) -> list[TransferRequest]:
        ds = self._dataset(dataset_id)
        reps = self._replicas[dataset_id]
        if not any(r.state is ReplicaState.AVAILABLE for r in reps.values()):
            raise FlowError("NO_SOURCE_REPLICA", dataset_id)
        holding = {rse for rse, r in reps.items() if r.state in _HOLDING}
        targeted: list[TransferRequest] = []
        planned: set[str] = set()

        def fits(rse_id: str) -> bool:
            rse = self.world.rses[rse_id]
            return rse.available and rse.free >= ds.size

        for rule in self.rules.values():
            if not rule.selector.matches(ds):
                continue
            dest = rule.destination
            if dest.kind == "SPECIFIC":
                if dest.target in holding or dest.target in planned or not fits(dest.target):
                    continue
                planned.add(dest.target)
                targeted.append(TransferRequest(ds.id, self._best_source(ds, dest.target), dest.target, rule.id))
                continue
            region = Region(dest.target)
            in_region = [r.id for r in self.world.disk_rses(region)]
            have = sum(1 for r in in_region if r in holding or r in planned)
            for k in range(have, rule.copies):
                candidates = tuple(r for r in in_region if r not in holding and r not in planned and fits(r))
                if not candidates:
                    break
                key = (ds.id, rule.id, k, candidates)
                pick = self._picks.get(key)
                if pick is None:
                    pick = self._picks[key] = candidates[self.world.draw("rse-select", len(candidates))]
                planned.add(pick)
                targeted.append(TransferRequest(ds.id, self._best_source(ds, pick), pick, rule.id))
        return targeted

    def apply_rules(self, dataset_id: str) -> list[TransferRequest]:
        """Evaluate rules for a dataset and start the resulting transfers."""
        try:
            requests = self.evaluate_rules(dataset_id)
        except FlowError as exc:
            if exc.code == "NO_SOURCE_REPLICA":
                return []
            raise
        self._picks = {k: v for k, v in self._picks.items() if k[0] != dataset_id}
        started = []
        for req in requests:
            if req.src is None:
                self.world.emit("TRANSFER_FAIL", dataset_id, dst=req.dst, reason="no_route")
                continue
            self.start_transfer(dataset_id, req.src, req.dst)
            started.append(req)
        return started

    def _best_source(self, ds: Dataset, dst: str) -> Optional[str]:
        best = None
        for rse_id, rep in sorted(self._replicas[ds.id].items()):
            if rep.state is not ReplicaState.AVAILABLE or not self.world.rses[rse_id].available:
                continue
            eta = self.world.estimate(rse_id, dst, ds.size)
            if eta is BLOCKED:
                continue
            if best is None or eta < best[0]:
                best = (eta, rse_id)
        return None if best is None else best[1]

    # -- transfers -----------------------------------------------------------

    def begin_copy(self, dataset_id: str, dst: str, src: str, lifetime: Optional[int] = None) -> Replica:
        """Create the COPYING replica at ``dst`` and reserve its bytes."""
        ds = self._dataset(dataset_id)
        old = self._replicas[dataset_id].get(dst)
        if old is not None and old.state in _HOLDING:
            raise FlowError("DUPLICATE_REPLICA", f"{dataset_id} already at {dst}")
        self._rse(dst).reserve(ds.size)
        rep = Replica(dataset_id, dst, ReplicaState.COPYING, 0, self.world.now, ds.size, lifetime)
        self._replicas[dataset_id][dst] = rep
        self.world.emit("TRANSFER_START", dataset_id, src=src, dst=dst, size=ds.size)
        return rep

    def start_transfer(self, dataset_id: str, src: str, dst: str) -> Replica:
        ds = self._dataset(dataset_id)
        rep = self.begin_copy(dataset_id, dst, src)
        self._changed(rep, None, reapply=False)

        def done() -> None:
            if self._replicas[dataset_id].get(dst) is not rep or rep.state is not ReplicaState.COPYING:
                return
            source = self._replicas[dataset_id].get(src)
            ok = not self.world.chance("transfer-corrupt", self.transfer_corrupt_prob)
            if source is None or source.state is not ReplicaState.AVAILABLE:
                ok = False
            self.complete_transfer(dataset_id, dst, ok)

        if self.world.transmit(src, dst, ds.size, done) is BLOCKED:
            # route vanished between estimate and send
            self.complete_transfer(dataset_id, dst, False)
        return rep

    def complete_transfer(self, dataset_id: str, dst_rse: str, checksum_ok: bool) -> ReplicaState:
        ds = self._dataset(dataset_id)
        rep = self._replicas[dataset_id].get(dst_rse)
        if rep is None or rep.state is not ReplicaState.COPYING:
            raise FlowError("NO_PENDING_TRANSFER", f"{dataset_id} -> {dst_rse}")
        old = rep.state
        rep.created_at = self.world.now
        if checksum_ok:
            rep.state = ReplicaState.AVAILABLE
            rep.checksum = ds.checksum
            self.world.emit("TRANSFER_DONE", dataset_id, dst=dst_rse)
            self._schedule_expiry(rep)
        else:
            rep.state = ReplicaState.CORRUPT
            rep.checksum = corrupted(ds.checksum)
            self.world.rses[dst_rse].release(ds.size)
            self.world.emit("TRANSFER_FAIL", dataset_id, dst=dst_rse, reason="checksum")
        self._changed(rep, old)
        return rep.state

    # -- lifetime ------------------------------------------------------------

    def _schedule_expiry(self, rep: Replica) -> None:
        if rep.lifetime is None:
            return

        def due() -> None:
            if self._replicas[rep.dataset_id].get(rep.rse) is not rep:
                return
            if any(r is rep for r in self.expire_replicas(self.world.now)):
                self.world.emit("EXPIRE", rep.dataset_id, rse=rep.rse)
                for fn in self.expiry_listeners:
                    fn(rep)

        self.world.schedule(rep.expires_at, due)

    def expire_replicas(self, now: int) -> list[Replica]:
        out = []
        for ds_id in sorted(self._replicas):
            for rse, rep in sorted(self._replicas[ds_id].items()):
                if rep.state is ReplicaState.AVAILABLE and rep.expires_at is not None and rep.expires_at <= now:
                    out.append(rep)
        return out

    # -- state changes outside the rule engine -------------------------------

    def mark_purged(self, dataset_id: str, rse: str) -> Replica:
        """Terminal deletion. Only :func:`gridflow.policy.Policy.purge` calls this."""
        rep = self._replicas[dataset_id][rse]
        old = rep.state
        if old in _HOLDING:
            self.world.rses[rse].release(rep.size)
        rep.state = ReplicaState.PURGED
        self._changed(rep, old)
        return rep

    def lose_replica(self, dataset_id: str, rse: str) -> Replica:
        """Fault injection: the copy at ``rse`` becomes unreadable."""
        rep = self._replicas[dataset_id].get(rse)
        if rep is None or rep.state is not ReplicaState.AVAILABLE:
            raise FlowError("NO_REPLICA_AT_RSE", f"{dataset_id} @ {rse}")
        rep.state = ReplicaState.CORRUPT
        rep.checksum = corrupted(rep.checksum)
        self.world.rses[rse].release(rep.size)
        self.world.emit("REPLICA_LOST", dataset_id, rse=rse)
        self._changed(rep, ReplicaState.AVAILABLE)
        return rep

    def _changed(self, rep: Replica, old: Optional[ReplicaState], reapply: bool = True) -> None:
        for fn in self.listeners:
            fn(rep, old)
        if reapply and self.auto_apply and self.rules:
            self.apply_rules(rep.dataset_id)

    # -- queries -------------------------------------------------------------

    def replicas_of(self, dataset_id: str) -> list[Replica]:
        self._dataset(dataset_id)
        return [r for _, r in sorted(self._replicas[dataset_id].items()) if r.state is not ReplicaState.PURGED]

    def replica(self, dataset_id: str, rse: str) -> Optional[Replica]:
        return self._replicas.get(dataset_id, {}).get(rse)

    def available_at(self, dataset_id: str) -> list[str]:
        return [r.rse for r in self.replicas_of(dataset_id) if r.state is ReplicaState.AVAILABLE]

    def dump(self) -> dict:
        return {
            ds_id: {
                "run_id": ds.run_id,
                "size": ds.size,
                "checksum": ds.checksum,
                "science": ds.science,
                "source": ds.source,
                "replicas": [r.to_dict() for _, r in sorted(self._replicas[ds_id].items())],
            }
            for ds_id, ds in sorted(self.datasets.items())
        }

    def _dataset(self, dataset_id: str) -> Dataset:
        try:
            return self.datasets[dataset_id]
        except KeyError:
            raise FlowError("UNKNOWN_DATASET", dataset_id) from None

    def _rse(self, rse_id: str):
        try:
            return self.world.rses[rse_id]
        except KeyError:
            raise FlowError("UNKNOWN_RSE", rse_id) from None
