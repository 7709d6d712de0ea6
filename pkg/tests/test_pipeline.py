import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridflow.catalog import Selector
from gridflow.errors import FlowError
from gridflow.invariants import check_trace
from gridflow.metadb import RCC, RunStatus
from gridflow.pipeline import DEFAULT_MINITREES, ProcessedDataset, chunk_run, reduce_size
from gridflow.presets import EU_RSES
from gridflow.reports import jobs_from_log, wall_hours_from_jobs

from conftest import land, make_facility, make_record


def proc_facility(sites=None, faults=None, **policy):
    over = {"policy": {"daily_processing": False, **policy}}
    if sites is not None:
        over["sites"] = sites
    if faults is not None:
        over["faults"] = faults
    return make_facility(rules_enabled=False, **over)


def place(fac, run_id, rses, events=250, size=25_000, science=False):
    ds = land(fac, run_id, events=events, size=size, science=science, archive=False)
    for r in rses:
        fac.catalog.begin_copy(run_id, r, "LNGS_BUFFER")
        fac.catalog.complete_transfer(run_id, r, True)
    return ds


def kinds_for(log, prefix):
    return [(e.kind, e.time) for e in log if e.subject.startswith(prefix)]


def rse_kinds(fac):
    return {r.id: r.kind.value for r in fac.world.rses.values()}


# -- chunking -----------------------------------------------------------------


def test_twenty_thousand_events_make_200_chunks():
    chunks = chunk_run(make_record("r", events=20_000, size=2_000_000))
    assert len(chunks) == 200
    assert {c.event_range[1] - c.event_range[0] for c in chunks} == {100}


def test_empty_run_has_no_chunks():
    assert chunk_run(make_record("r", events=0, size=0)) == []


def test_ragged_last_chunk():
    chunks = chunk_run(make_record("r", events=250, size=2500))
    assert [c.event_range for c in chunks] == [(0, 100), (100, 200), (200, 250)]
    assert [c.size for c in chunks] == [1000, 1000, 500]


@given(events=st.integers(0, 5000), per_event=st.integers(1, 50), chunk_size=st.integers(1, 300))
def test_chunks_tile_the_run(events, per_event, chunk_size):
    size = events * per_event
    chunks = chunk_run(make_record("r", events=events, size=size), chunk_size)
    assert len(chunks) == math.ceil(events / chunk_size)
    pos = 0
    for c in chunks:
        assert c.event_range[0] == pos
        pos = c.event_range[1]
    assert pos == events
    assert all(c.event_range[1] - c.event_range[0] == chunk_size for c in chunks[:-1])
    assert sum(c.size for c in chunks) == size
    # proportional: equal event counts carry equal bytes when bytes/event is uniform
    assert all(c.size == (c.event_range[1] - c.event_range[0]) * per_event for c in chunks)


# -- brokering ----------------------------------------------------------------


def test_osg_preferred():
    fac = proc_facility()
    place(fac, "r1", ["UC_DCACHE", "CNAF"])
    site = fac.pipeline.select_site("r1")
    assert site.pool.value == "OSG" and site.attached_rse == "UC_DCACHE"


def test_egi_when_only_europe():
    fac = proc_facility()
    place(fac, "r1", ["CNAF"])
    assert fac.pipeline.select_site("r1").id == "EGI_CNAF"


def test_no_replica():
    fac = proc_facility()
    place(fac, "r1", [])
    fac.catalog.lose_replica("r1", "LNGS_BUFFER")
    with pytest.raises(FlowError) as exc:
        fac.pipeline.select_site("r1")
    assert exc.value.code == "NO_REPLICA"


def test_ties_go_to_shorter_queue_then_id():
    fac = proc_facility()
    place(fac, "r1", ["UC_DCACHE"])
    assert fac.pipeline.select_site("r1").id == "OSG_COMET"
    fac.pipeline.queues["OSG_COMET"].running = 1
    assert fac.pipeline.select_site("r1").id == "OSG_UCHICAGO"


@given(holding=st.sets(st.sampled_from(["UC_DCACHE", *EU_RSES]), min_size=1))
@settings(max_examples=40, deadline=None)
def test_locality_property(holding):
    fac = proc_facility()
    place(fac, "r1", sorted(holding))
    site = fac.pipeline.select_site("r1")
    assert site.attached_rse in holding
    assert (site.pool.value == "OSG") == ("UC_DCACHE" in holding)


# -- DAG construction ---------------------------------------------------------


def test_dag_shape():
    fac = proc_facility()
    place(fac, "big", ["UC_DCACHE"], events=20_000, size=2_000_000)
    dag = fac.pipeline.build_dag("big")
    assert (dag.nodes, dag.merge_in_degree) == (201, 200)
    place(fac, "one", ["UC_DCACHE"], events=40, size=400)
    assert fac.pipeline.build_dag("one").nodes == 2
    with pytest.raises(FlowError) as exc:
        fac.pipeline.build_dag("one", chunks=[])
    assert exc.value.code == "EMPTY_DATASET"


# -- execution ----------------------------------------------------------------

FIFTY_SLOTS = [{"id": "OSG_BIG", "pool": "OSG", "attached_rse": "UC_DCACHE", "slots": 50, "throughput": 200},
               {"id": "EGI_CNAF", "pool": "EGI", "attached_rse": "CNAF", "slots": 10, "throughput": 200}]


def test_slot_waves():
    fac = proc_facility(sites=FIFTY_SLOTS)
    place(fac, "r1", ["UC_DCACHE"], events=20_000, size=200_000)  # 1000 B chunks, 5 s each
    t0 = fac.world.now
    result = fac.pipeline.run_dag(fac.pipeline.build_dag("r1"))
    done = [e.time for e in fac.world.log if e.kind == "JOB_DONE"]
    merge = next(e for e in fac.world.log if e.kind == "MERGE_DONE")
    assert max(done) - t0 == math.ceil(200 / 50) * 5
    assert merge.time == max(done) + merge.detail["runtime"]
    assert result.size == 20_000 and result.location == "DCACHE_STAGING"


def test_injected_failure_is_retried():
    fac = proc_facility(faults={"job_failures": [{"dataset": "r1", "chunk": 7, "attempt": 1}]})
    place(fac, "r1", ["UC_DCACHE"], events=1000, size=10_000)
    fac.pipeline.run_dag(fac.pipeline.build_dag("r1", max_retries=1))
    seven = [k for k, _ in kinds_for(fac.world.log, "r1@1#7")]
    assert seven == ["JOB_START", "JOB_FAIL", "JOB_RETRY", "JOB_START", "JOB_DONE"]
    last_done = max(e.time for e in fac.world.log if e.kind == "JOB_DONE")
    assert next(e.time for e in fac.world.log if e.kind == "MERGE_DONE") >= last_done


def test_certain_failure_exhausts_retries():
    sites = [dict(FIFTY_SLOTS[0], job_failure_prob=1.0)]
    fac = proc_facility(sites=sites)
    place(fac, "r1", ["UC_DCACHE"], events=500, size=5000)
    with pytest.raises(FlowError) as exc:
        fac.pipeline.run_dag(fac.pipeline.build_dag("r1", max_retries=2))
    assert exc.value.code == "DAG_FAILED" and exc.value.detail["failed"]
    starts = [e.subject for e in fac.world.log if e.kind == "JOB_START"]
    assert {starts.count(s) for s in set(starts)} == {3}
    assert "MERGE_START" not in {e.kind for e in fac.world.log}
    assert check_trace(fac.world.log, rse_kinds(fac)) == []


def test_egi_output_stages_at_attached_rse():
    fac = proc_facility()
    place(fac, "r1", ["NIKHEF"])
    assert fac.pipeline.run_dag(fac.pipeline.build_dag("r1")).location == "STAGING:NIKHEF"


def test_processed_size_is_reduced_per_chunk():
    fac = proc_facility(reduction_ratio="0.1")
    place(fac, "r1", ["UC_DCACHE"], events=250, size=2507)
    out = fac.pipeline.run_dag(fac.pipeline.build_dag("r1"))
    sizes = [c.size for c in chunk_run(make_record("r1", events=250, size=2507))]
    assert out.size == sum(reduce_size(s, Fraction(1, 10)) for s in sizes) == 250


def test_merge_arithmetic():
    fac = proc_facility()
    place(fac, "r1", ["UC_DCACHE"], events=20_000, size=2_000_000)
    dag = fac.pipeline.build_dag("r1")
    outputs = {j.chunk.id: 10 ** 7 for j in dag.chunk_jobs}
    assert fac.pipeline.merge(dag, dict(outputs)).size == 2 * 10 ** 9
    outputs.pop(dag.chunk_jobs[0].chunk.id)
    with pytest.raises(FlowError) as exc:
        fac.pipeline.merge(dag, outputs)
    assert exc.value.code == "MISSING_CHUNK_OUTPUT"
    place(fac, "r2", ["UC_DCACHE"], events=10, size=100)
    dag = fac.pipeline.build_dag("r2")
    assert fac.pipeline.merge(dag, {dag.chunk_jobs[0].chunk.id: 42}).size == 42


# -- shipping and minitrees ---------------------------------------------------


def _ship(fac, run_id="r1"):
    fac.metadb.advance(run_id, RunStatus.SAFE)
    p = ProcessedDataset(run_id, run_id, 10_000, "DCACHE_STAGING", "UC_DCACHE")
    fac.pipeline.ship_to_rcc(p)
    fac.world.run()
    return p, next(e.time for e in fac.world.log if e.kind == "SHIP_DONE")


def test_ship_records_rcc_outside_catalog():
    fac = proc_facility()
    place(fac, "r1", [])
    n_datasets = len(fac.catalog.datasets)
    p, _ = _ship(fac)
    assert p.location == RCC
    rec = fac.metadb.get("r1")
    assert RCC in rec.locations and rec.status is RunStatus.PROCESSED
    assert len(fac.catalog.datasets) == n_datasets
    assert all(r.rse != RCC for r in fac.catalog.replicas_of("r1"))


def place_and_return(fac):
    place(fac, "r1", [])
    return fac


def test_outage_delays_ship_by_its_window():
    # default link: 1000 B/s, 2 s latency, so 10 kB takes 12 s
    _, clean = _ship(place_and_return(proc_facility()))
    _, delayed = _ship(place_and_return(proc_facility(faults={"total_outages": [[5, 105]]})))
    assert clean == 12 and delayed == clean + 100


def test_minitrees():
    fac = proc_facility()
    place(fac, "r1", [])
    with pytest.raises(FlowError) as exc:
        fac.pipeline.grow_minitrees("r1")
    assert exc.value.code == "NOT_PROCESSED"
    _ship(fac)
    before = fac.metadb.get("r1").to_dict()
    mt = fac.pipeline.grow_minitrees("r1", ["basic", "positions", "corrections"])
    assert len(mt.categories) == 3 and mt.generation == 1
    again = fac.pipeline.grow_minitrees("r1", ["basic", "positions", "corrections"])
    assert len(again.categories) == 3 and again.generation == 2
    assert fac.metadb.get("r1").to_dict() == before


def test_daily_processing_end_to_end():
    fac = make_facility()
    land(fac, "r1", science=True, events=500, size=5000)
    fac.world.run()
    assert RCC in fac.metadb.get("r1").locations
    assert len(fac.pipeline.minitrees["r1"].categories) == len(DEFAULT_MINITREES)


# -- campaigns ----------------------------------------------------------------


def test_campaign_mixes_pools_and_accounts_wall_hours():
    fac = proc_facility()
    for i in range(10):
        place(fac, f"r{i}", ["UC_DCACHE"] if i % 2 else ["CNAF"])
    runs = fac.pipeline.reprocess_campaign(lambda rec: True)
    fac.world.run()
    pools = {fac.world.sites[r.dag.site].pool.value for r in runs}
    assert len(runs) == 10 and pools == {"OSG", "EGI"}
    assert all(r.result is not None for r in runs)
    rows = wall_hours_from_jobs(fac.pipeline.job_records, "2016-11-01")
    assert sum(r.seconds for r in rows) == sum(j.runtime for j in fac.pipeline.job_records)
    from_log = wall_hours_from_jobs(jobs_from_log(fac.world.log), "2016-11-01")
    assert from_log == rows


def test_empty_campaign():
    fac = proc_facility()
    place(fac, "r1", ["CNAF"])
    assert fac.pipeline.reprocess_campaign(Selector(science=True)) == []


@given(seed=st.integers(0, 10 ** 6), p=st.sampled_from([0.0, 0.1, 0.3, 0.6]),
       retries=st.integers(0, 3), events=st.integers(1, 1500), slots=st.integers(1, 8))
@settings(max_examples=40, deadline=None)
def test_barrier_and_retry_bound_on_traces(seed, p, retries, events, slots):
    sites = [{"id": "OSG_S", "pool": "OSG", "attached_rse": "UC_DCACHE", "slots": slots,
              "job_failure_prob": p, "throughput": 7}]
    fac = make_facility(seed=seed, rules_enabled=False, sites=sites, policy={"daily_processing": False})
    place(fac, "r1", ["UC_DCACHE"], events=events, size=events * 3)
    run = fac.pipeline.execute_dag(fac.pipeline.build_dag("r1", max_retries=retries))
    fac.world.run()
    assert run.finished
    assert check_trace(fac.world.log, rse_kinds(fac)) == []
    for job in run.dag.chunk_jobs:
        assert job.attempts <= retries + 1
