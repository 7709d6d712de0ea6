"""Assemble every subsystem on one world and connect their hooks."""

from __future__ import annotations

from typing import Optional

from .catalog import Catalog, Replica, ReplicaState
from .ingest import Ingest
from .invariants import check_trace
from .metadb import TAPE, MetaDB, RunStatus
from .pipeline import Pipeline
from .policy import Policy
from .scenario import Scenario
from .simgrid import Kind, World
from .tapestore import TapeRecord, TapeStore


class Facility:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None, rules_enabled: bool = True):
        self.scenario = sc = scenario
        pol = sc.policy
        self.world = World(
            seed=sc.seed if seed is None else seed,
            rses=sc.make_rses(),
            links=sc.make_links(),
            sites=sc.make_sites(),
            default_link=sc.default_link,
            global_outages=sc.faults.total_outages,
        )
        w = self.world
        self.catalog = Catalog(w, transfer_corrupt_prob=sc.faults.transfer_corrupt_prob)
        self.metadb = MetaDB(w, pol.mirror_lags)
        self.tape = TapeStore(w, self.catalog, corrupt_prob=sc.faults.tape_corrupt_prob)
        self.policy = Policy(w, self.catalog, self.tape, pol.dcache_rse, pol.purge_retry)
        self.pipeline = Pipeline(
            w, self.catalog, self.metadb,
            chunk_size=pol.chunk_size, max_retries=pol.max_retries,
            reduction_ratio=pol.reduction_ratio, minitree_ratio=pol.minitree_ratio,
            dcache_rse=pol.dcache_rse, minitree_categories=pol.minitree_categories,
            ship_corrupt_prob=sc.faults.ship_corrupt_prob,
        )
        self.ingest = Ingest(w, self.catalog, self.metadb, self.tape, self.policy,
                             lifetime=pol.lngs_lifetime, chunk_size=pol.chunk_size,
                             resume_fraction=pol.resume_fraction)
        self.safe_at: dict[str, int] = {}

        self.catalog.listeners.append(self._on_replica)
        self.catalog.expiry_listeners.append(self.policy.on_expire)
        self.tape.listeners.append(self._on_tape)
        if pol.daily_processing:
            self.metadb.location_listeners.append(self.pipeline.on_location)
        self.pipeline.forced_failures.update(sc.faults.job_failures)

        if rules_enabled:
            for rule in (sc.standard_rules() if sc.rules is None else sc.rules):
                self.catalog.declare_rule(rule)
        self._schedule_faults()
        for camp in sc.campaigns:
            w.schedule(camp.at, lambda sel=camp.selector: self.pipeline.reprocess_campaign(sel))
        self.ingest.start(sc.run_plan)

    def _schedule_faults(self) -> None:
        w, f = self.world, self.scenario.faults
        for at, ds, rse in f.forced_purges:
            w.schedule(at, lambda ds=ds, rse=rse: ds in self.catalog.datasets and self.policy.force_purge(ds, rse))
        for at, ds, rse in f.replica_losses:
            w.schedule(at, lambda ds=ds, rse=rse: self._lose(ds, rse))
        for at, ds in f.tape_corruptions:
            w.schedule(at, lambda ds=ds: self._corrupt_tape(ds))

    def _lose(self, ds: str, rse: str) -> None:
        rep = self.catalog.replica(ds, rse)
        if rep is not None and rep.state is ReplicaState.AVAILABLE:
            self.catalog.lose_replica(ds, rse)

    def _corrupt_tape(self, ds: str) -> None:
        rec = self.tape.records.get(ds)
        if rec is not None and rec.archived:
            self.tape.inject_corruption(ds)

    # -- hooks ---------------------------------------------------------------

    def _on_replica(self, rep: Replica, old: Optional[ReplicaState]) -> None:
        run_id = self.catalog.datasets[rep.dataset_id].run_id
        if rep.state is ReplicaState.COPYING:
            self.metadb.advance(run_id, RunStatus.DISTRIBUTING)
        elif rep.state is ReplicaState.AVAILABLE:
            self.metadb.upsert_location(run_id, rep.rse)
        else:
            self.metadb.remove_location(run_id, rep.rse)
            if rep.state is ReplicaState.PURGED and rep.rse == self.world.buffer.id:
                self.metadb.advance(run_id, RunStatus.PURGED_FROM_LNGS)
        if self.world.rses[rep.rse].kind is Kind.BUFFER:
            self.ingest.check_resume()
        self._check_safe(rep.dataset_id)

    def _on_tape(self, record: TapeRecord) -> None:
        run_id = self.catalog.datasets[record.dataset_id].run_id
        if record.verified:
            self.metadb.upsert_location(run_id, TAPE)
        else:
            self.metadb.remove_location(run_id, TAPE)
        self._check_safe(record.dataset_id)

    def _check_safe(self, dataset_id: str) -> None:
        if dataset_id in self.safe_at or not self.policy.check_safety(dataset_id).satisfied:
            return
        self.safe_at[dataset_id] = self.world.now
        self.world.emit("SAFE", dataset_id)
        self.metadb.advance(self.catalog.datasets[dataset_id].run_id, RunStatus.SAFE)

    # -- running -------------------------------------------------------------

    def run(self, until: Optional[int] = None):
        return self.world.run_until(self.scenario.duration if until is None else until)

    def violations(self) -> list[str]:
        kinds = {r.id: r.kind.value for r in self.world.rses.values()}
        return check_trace(self.world.log, kinds)
