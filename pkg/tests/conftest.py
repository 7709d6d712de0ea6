"""Shared builders for small worlds used across the suite."""

from __future__ import annotations

import pytest

from gridflow.catalog import Catalog, Dataset
from gridflow.metadb import MetaDB, RunRecord, RunStatus, Source
from gridflow.pipeline import chunk_run
from gridflow.policy import Policy
from gridflow.presets import topology
from gridflow.scenario import parse_scenario
from gridflow.simgrid import DAY, World
from gridflow.system import Facility
from gridflow.tapestore import TapeStore


def base_doc(seed: int = 42, **over) -> dict:
    doc = {"seed": seed, "duration": 30 * DAY}
    doc.update(topology(throughput=200))
    doc["run_plan"] = {"start": 0, "duration": DAY, "entries": []}
    doc.update(over)
    return doc


def make_facility(seed: int = 42, rules_enabled: bool = True, **over) -> Facility:
    return Facility(parse_scenario(base_doc(seed, **over)), rules_enabled=rules_enabled)


def make_record(run_id: str, size: int = 10_000, events: int = 250, science: bool = False,
                source: str = "LED") -> RunRecord:
    return RunRecord(run_id, Source(source), science, events, size)


def dataset_for(rec: RunRecord, chunk_size: int = 100) -> Dataset:
    chunks = chunk_run(rec, chunk_size)
    return Dataset(rec.run_id, rec.run_id, rec.size, [c.id for c in chunks], [c.size for c in chunks],
                   source=rec.source.value, science=rec.science)


def land(fac: Facility, run_id: str, lifetime=None, archive: bool = True, **kw) -> Dataset:
    """Put a run on the buffer the way ingest does, minus the one-hour wait."""
    rec = make_record(run_id, **kw)
    fac.metadb.insert(rec)
    fac.metadb.set_status(run_id, RunStatus.ON_BUFFER)
    ds = dataset_for(rec)
    fac.catalog.register(ds, fac.world.buffer.id, lifetime)
    if archive:
        fac.tape.archive(ds.id)
    return ds


class Bare:
    """World plus catalog, metadb, tape and policy, with no hooks or rules."""

    def __init__(self, seed: int = 42, auto_apply: bool = False, **topo):
        sc = parse_scenario(base_doc(seed, **topo))
        self.world = World(seed, sc.make_rses(), sc.make_links(), sc.make_sites(), sc.default_link)
        self.catalog = Catalog(self.world, auto_apply=auto_apply)
        self.metadb = MetaDB(self.world, {"CHICAGO": 60})
        self.tape = TapeStore(self.world, self.catalog)
        self.policy = Policy(self.world, self.catalog, self.tape)
        self.scenario = sc

    def add(self, run_id: str, **kw) -> Dataset:
        rec = make_record(run_id, **kw)
        self.metadb.insert(rec)
        ds = dataset_for(rec)
        self.catalog.register(ds, self.world.buffer.id)
        return ds

    def settle(self) -> None:
        self.world.run()


@pytest.fixture
def bare() -> Bare:
    return Bare()


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
