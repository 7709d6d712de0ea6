"""Tape archive path.

One serial entry point for archive, verify and restore, mirroring a single
tape client at the experiment site. The tape store reads the catalog to find
its source and writes restored replicas back through the catalog's replica
API, but it never evaluates or applies transfer rules.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from .catalog import Catalog, ReplicaState, corrupted
from .errors import FlowError
from .simgrid import BLOCKED, World


@dataclass
class TapeRecord:
    dataset_id: str
    checksum: int = 0
    archived_at: Optional[int] = None  # None while the upload is in flight
    verified: bool = False

    @property
    def archived(self) -> bool:
        return self.archived_at is not None


class TapeStore:
    def __init__(self, world: World, catalog: Catalog, corrupt_prob: float = 0.0,
                 rearchive_on_failure: bool = True):
        self.world = world
        self.catalog = catalog
        self.corrupt_prob = corrupt_prob
        self.rearchive_on_failure = rearchive_on_failure
        self.records: dict[str, TapeRecord] = {}
        self.listeners: list[Callable[[TapeRecord], None]] = []
        self._queue: deque = deque()
        self._busy = False

    @property
    def tape_id(self) -> str:
        return self.world.tape.id

    # -- the single client queue ---------------------------------------------

    def _enqueue(self, src: str, dst: str, size: int, on_done: Callable[[], None],
                 on_blocked: Callable[[], None]) -> None:
        self._queue.append((src, dst, size, on_done, on_blocked))
        self._pump()

    def _pump(self) -> None:
        while not self._busy and self._queue:
            src, dst, size, on_done, on_blocked = self._queue.popleft()

            def finished(on_done=on_done) -> None:
                self._busy = False
                on_done()
                self._pump()

            self._busy = True
            if self.world.transmit(src, dst, size, finished) is BLOCKED:
                self._busy = False
                on_blocked()

    # -- operations ----------------------------------------------------------

    def archive(self, dataset_id: str) -> TapeRecord:
        """Queue an upload from the LNGS buffer; the record fills in on arrival."""
        existing = self.records.get(dataset_id)
        if existing is not None and (not existing.archived or existing.verified
                                     or existing.checksum == self._canonical(dataset_id)):
            raise FlowError("ALREADY_ARCHIVED", dataset_id)
        buffer_id = self.world.buffer.id
        rep = self.catalog.replica(dataset_id, buffer_id)
        if rep is None or rep.state is not ReplicaState.AVAILABLE:
            raise FlowError("SOURCE_MISSING", f"{dataset_id} not on {buffer_id}")
        ds = self.catalog.datasets[dataset_id]
        record = TapeRecord(dataset_id)
        self.records[dataset_id] = record
        self.world.emit("ARCHIVE_START", dataset_id, size=ds.size)

        def done() -> None:
            src = self.catalog.replica(dataset_id, buffer_id)
            bad = self.world.chance("tape-corrupt", self.corrupt_prob)
            if src is None or src.state is not ReplicaState.AVAILABLE:
                bad = True
            record.checksum = corrupted(ds.checksum) if bad else ds.checksum
            record.archived_at = self.world.now
            self.world.emit("ARCHIVE_DONE", dataset_id)
            if not self.verify(dataset_id) and self.rearchive_on_failure:
                self._retry(dataset_id)

        def blocked() -> None:
            del self.records[dataset_id]
            self.world.emit("ARCHIVE_FAIL", dataset_id, reason="blocked")

        self._enqueue(buffer_id, self.tape_id, ds.size, done, blocked)
        return record

    def _retry(self, dataset_id: str) -> None:
        rep = self.catalog.replica(dataset_id, self.world.buffer.id)
        if rep is not None and rep.state is ReplicaState.AVAILABLE:
            self.world.emit("ARCHIVE_RETRY", dataset_id)
            self.archive(dataset_id)

    def verify(self, dataset_id: str) -> bool:
        record = self.records.get(dataset_id)
        if record is None or not record.archived:
            raise FlowError("NOT_ARCHIVED", dataset_id)
        ok = record.checksum == self._canonical(dataset_id)
        changed = ok != record.verified
        record.verified = ok
        self.world.emit("TAPE_VERIFY", dataset_id, ok=ok)
        if changed:
            for fn in self.listeners:
                fn(record)
        return ok

    def inject_corruption(self, dataset_id: str) -> None:
        """Fault injection: flip the stored checksum of an archived copy."""
        record = self.records.get(dataset_id)
        if record is None or not record.archived:
            raise FlowError("NOT_ARCHIVED", dataset_id)
        record.checksum = corrupted(self._canonical(dataset_id))
        was = record.verified
        record.verified = False
        self.world.emit("TAPE_CORRUPT", dataset_id)
        if was:
            for fn in self.listeners:
                fn(record)

    def restore(self, dataset_id: str, dst: str, lifetime: Optional[int] = None):
        """Copy a verified tape record back to disk at ``dst``.

        Returns the catalog replica, COPYING until the tape read completes.
        """
        record = self.records.get(dataset_id)
        if record is None or not record.archived:
            raise FlowError("NOT_ARCHIVED", dataset_id)
        if not record.verified:
            raise FlowError("NOT_VERIFIED", dataset_id)
        ds = self.catalog.datasets[dataset_id]
        rse = self.world.rses.get(dst)
        if rse is None:
            raise FlowError("UNKNOWN_RSE", dst)
        if rse.free < ds.size:
            raise FlowError("INSUFFICIENT_CAPACITY", f"{dst}: {ds.size} > {rse.free}")
        rep = self.catalog.begin_copy(dataset_id, dst, self.tape_id, lifetime=lifetime)
        self.world.emit("RESTORE_START", dataset_id, dst=dst)

        def done() -> None:
            self.world.emit("RESTORE_DONE", dataset_id, dst=dst)
            self.catalog.complete_transfer(dataset_id, dst, record.checksum == ds.checksum)

        def blocked() -> None:
            self.catalog.complete_transfer(dataset_id, dst, False)

        self._enqueue(self.tape_id, dst, ds.size, done, blocked)
        return rep

    def status(self, dataset_id: str) -> str:
        """``OK``, ``CORRUPT`` or ``MISSING`` for the verify-tape report."""
        record = self.records.get(dataset_id)
        if record is None or not record.archived:
            return "MISSING"
        return "OK" if record.checksum == self._canonical(dataset_id) else "CORRUPT"

    def _canonical(self, dataset_id: str) -> int:
        return self.catalog.datasets[dataset_id].checksum
