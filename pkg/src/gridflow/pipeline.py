"""Processing orchestration.

A raw dataset is cut into fixed-size event chunks, one job per chunk, all
submitted together with a single merge node that waits on every chunk. The DAG
runs at one compute site chosen by where the raw replicas live (OSG sites
attached to a holding RSE win over EGI ones). Failed chunk jobs are resubmitted
automatically up to ``max_retries`` times. The merged product is copied to RCC
outside the catalog and minitrees are grown there.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional, Union

from .catalog import Catalog, Selector
from .errors import FlowError
from .metadb import RCC, MetaDB, RunRecord, RunStatus
from .simgrid import BLOCKED, ComputeSite, Kind, Pool, World

DEFAULT_MINITREES = ("basic", "interaction_types", "positions", "corrections")


class JobState(str, enum.Enum):
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    DONE = "DONE"
    FAILED = "FAILED"


@dataclass(frozen=True)
class Chunk:
    id: str
    dataset_id: str
    index: int
    event_range: tuple[int, int]
    size: int


def chunk_ids_for(run_id: str, n: int) -> list[str]:
    return [f"{run_id}-{i:05d}" for i in range(n)]


def chunk_run(run: RunRecord, chunk_size: int = 100, dataset_id: Optional[str] = None) -> list[Chunk]:
    """Split a run into ``ceil(event_count / chunk_size)`` contiguous chunks.

    Bytes are spread in proportion to events with floor-of-cumulative
    rounding, so chunk sizes always sum to the run size exactly.
    """
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    n_events = run.event_count
    n = -(-n_events // chunk_size)
    ids = chunk_ids_for(run.run_id, n)
    chunks = []
    for i in range(n):
        lo, hi = i * chunk_size, min((i + 1) * chunk_size, n_events)
        size = run.size * hi // n_events - run.size * lo // n_events
        chunks.append(Chunk(ids[i], dataset_id or run.run_id, i, (lo, hi), size))
    return chunks


def reduce_size(size: int, ratio: Fraction) -> int:
    return math.floor(size * ratio)


@dataclass
class JobNode:
    id: str
    chunk: Optional[Chunk] = None  # None for the merge node
    attempts: int = 0
    state: JobState = JobState.PENDING
    output: Optional[int] = None


@dataclass
class ProcessingDag:
    id: str
    dataset_id: str
    run_id: str
    chunk_jobs: list[JobNode]
    merge_job: JobNode
    site: str
    max_retries: int

    @property
    def nodes(self) -> int:
        return len(self.chunk_jobs) + 1

    @property
    def merge_in_degree(self) -> int:
        return len(self.chunk_jobs)


@dataclass
class ProcessedDataset:
    dataset_id: str
    run_id: str
    size: int
    location: str  # "DCACHE_STAGING", "STAGING:<rse>" or "RCC"
    node: str  # network endpoint currently holding the file
    generation: int = 0


@dataclass
class MinitreeSet:
    run_id: str
    categories: list[str]
    sizes: list[int]
    generation: int


@dataclass
class JobRecord:
    site: str
    pool: str
    start: int
    runtime: int
    kind: str  # "chunk" | "merge"
    dag: str


@dataclass
class DagRun:
    dag: ProcessingDag
    result: Optional[ProcessedDataset] = None
    error: Optional[FlowError] = None
    on_finish: list[Callable[["DagRun"], None]] = field(default_factory=list)

    @property
    def finished(self) -> bool:
        return self.result is not None or self.error is not None


class _SiteQueue:
    def __init__(self, site: ComputeSite):
        self.site = site
        self.running = 0
        self.pending: deque = deque()

    @property
    def depth(self) -> int:
        return self.running + len(self.pending)


RunFilter = Union[Selector, Callable[[RunRecord], bool]]


class Pipeline:
    def __init__(
        self,
        world: World,
        catalog: Catalog,
        metadb: MetaDB,
        chunk_size: int = 100,
        max_retries: int = 3,
        reduction_ratio: Fraction | float | str = Fraction(1, 10),
        minitree_ratio: Fraction | float | str = Fraction(1, 1000),
        dcache_rse: str = "UC_DCACHE",
        minitree_categories: Iterable[str] = DEFAULT_MINITREES,
        ship_corrupt_prob: float = 0.0,
    ):
        self.world = world
        self.catalog = catalog
        self.metadb = metadb
        self.chunk_size = chunk_size
        self.max_retries = max_retries
        self.reduction_ratio = Fraction(str(reduction_ratio)) if isinstance(reduction_ratio, float) else Fraction(reduction_ratio)
        self.minitree_ratio = Fraction(str(minitree_ratio)) if isinstance(minitree_ratio, float) else Fraction(minitree_ratio)
        self.dcache_rse = dcache_rse
        self.minitree_categories = list(minitree_categories)
        self.ship_corrupt_prob = ship_corrupt_prob
        self.queues = {s.id: _SiteQueue(s) for s in sorted(world.sites.values(), key=lambda s: s.id)}
        self.processed: dict[str, ProcessedDataset] = {}
        self.minitrees: dict[str, MinitreeSet] = {}
        self.job_records: list[JobRecord] = []
        self.forced_failures: set[tuple[str, int, int]] = set()  # (dataset, chunk index, attempt)
        self.daily_started: set[str] = set()
        self._dag_count: dict[str, int] = {}

    # -- brokering -----------------------------------------------------------

    def select_site(self, dataset_id: str) -> ComputeSite:
        holding = set(self.catalog.available_at(dataset_id))
        if not holding:
            raise FlowError("NO_REPLICA", dataset_id)
        for pool in (Pool.OSG, Pool.EGI, Pool.LOCAL):
            cands = [q for q in self.queues.values() if q.site.pool is pool and q.site.attached_rse in holding]
            if cands:
                return min(cands, key=lambda q: (q.depth, q.site.id)).site
        raise FlowError("NO_SITE", f"no compute site attached to {sorted(holding)}")

    # -- DAG construction ----------------------------------------------------

    def chunks_of(self, dataset_id: str) -> list[Chunk]:
        ds = self.catalog.datasets[dataset_id]
        run = self.metadb.get(ds.run_id)
        chunks = chunk_run(run, self.chunk_size, dataset_id)
        assert [c.id for c in chunks] == ds.chunk_ids
        return chunks

    def build_dag(self, dataset_id: str, max_retries: Optional[int] = None,
                  site: Optional[str] = None, chunks: Optional[list[Chunk]] = None) -> ProcessingDag:
        if chunks is None:
            chunks = self.chunks_of(dataset_id)
        if not chunks:
            raise FlowError("EMPTY_DATASET", dataset_id)
        if site is None:
            site = self.select_site(dataset_id).id
        n = self._dag_count[dataset_id] = self._dag_count.get(dataset_id, 0) + 1
        dag_id = f"{dataset_id}@{n}"
        ds = self.catalog.datasets.get(dataset_id)
        return ProcessingDag(
            id=dag_id,
            dataset_id=dataset_id,
            run_id=ds.run_id if ds else dataset_id,
            chunk_jobs=[JobNode(f"{dag_id}#{c.index}", c) for c in chunks],
            merge_job=JobNode(f"{dag_id}#merge"),
            site=site,
            max_retries=self.max_retries if max_retries is None else max_retries,
        )

    # -- execution -----------------------------------------------------------

    def execute_dag(self, dag: ProcessingDag,
                    on_finish: Optional[Callable[[DagRun], None]] = None) -> DagRun:
        """Submit every chunk job at once; the merge runs when all are DONE."""
        run = DagRun(dag)
        if on_finish:
            run.on_finish.append(on_finish)
        q = self.queues[dag.site]
        self.world.emit("DAG_SUBMIT", dag.id, site=dag.site, pool=q.site.pool.value,
                        chunks=len(dag.chunk_jobs), max_retries=dag.max_retries)
        for job in dag.chunk_jobs:
            q.pending.append((run, job))
        self._dispatch(q)
        return run

    def run_dag(self, dag: ProcessingDag) -> ProcessedDataset:
        """Execute and drive the world until the DAG settles."""
        run = self.execute_dag(dag)
        while not run.finished and self.world.pending():
            self.world.run_until(self.world._heap[0].at)
        if run.error:
            raise run.error
        return run.result

    def _dispatch(self, q: _SiteQueue) -> None:
        while q.running < q.site.slots and q.pending:
            run, job = q.pending.popleft()
            if run.finished:
                continue
            q.running += 1
            if job.chunk is None:
                self._start_merge(q, run, job)
            else:
                self._start_chunk(q, run, job)

    def _runtime(self, size: int, site: ComputeSite) -> int:
        return max(1, -(-size // site.throughput))

    def _start_chunk(self, q: _SiteQueue, run: DagRun, job: JobNode) -> None:
        dag, site = run.dag, q.site
        job.attempts += 1
        job.state = JobState.RUNNING
        start = self.world.now
        runtime = self._runtime(job.chunk.size, site)
        forced = (dag.dataset_id, job.chunk.index, job.attempts) in self.forced_failures
        fails = self.world.chance("job-fail", site.job_failure_prob) or forced
        self.world.emit("JOB_START", job.id, dag=dag.id, site=site.id, attempt=job.attempts)

        def end() -> None:
            q.running -= 1
            self.job_records.append(JobRecord(site.id, site.pool.value, start, runtime, "chunk", dag.id))
            if run.finished:
                self._dispatch(q)
                return
            if fails:
                self.world.emit("JOB_FAIL", job.id, dag=dag.id, attempt=job.attempts, runtime=runtime)
                if job.attempts <= dag.max_retries:
                    job.state = JobState.PENDING
                    self.world.emit("JOB_RETRY", job.id, dag=dag.id, attempt=job.attempts + 1)
                    q.pending.append((run, job))
                else:
                    job.state = JobState.FAILED
                    self._fail_dag(q, run)
            else:
                job.state = JobState.DONE
                job.output = reduce_size(job.chunk.size, self.reduction_ratio)
                self.world.emit("JOB_DONE", job.id, dag=dag.id, attempt=job.attempts, runtime=runtime)
                if all(j.state is JobState.DONE for j in dag.chunk_jobs):
                    q.pending.appendleft((run, dag.merge_job))
            self._dispatch(q)

        self.world.after(runtime, end)

    def _fail_dag(self, q: _SiteQueue, run: DagRun) -> None:
        failed = [j.chunk.id for j in run.dag.chunk_jobs if j.state is JobState.FAILED]
        run.error = FlowError("DAG_FAILED", run.dag.id, failed=failed)
        q.pending = deque(item for item in q.pending if item[0] is not run)
        self.world.emit("DAG_FAILED", run.dag.id, failed=failed)
        for fn in run.on_finish:
            fn(run)

    def _start_merge(self, q: _SiteQueue, run: DagRun, job: JobNode) -> None:
        dag, site = run.dag, q.site
        job.attempts += 1
        job.state = JobState.RUNNING
        start = self.world.now
        runtime = self._runtime(sum(j.output for j in dag.chunk_jobs), site)
        self.world.emit("MERGE_START", job.id, dag=dag.id, site=site.id)

        def end() -> None:
            q.running -= 1
            self.job_records.append(JobRecord(site.id, site.pool.value, start, runtime, "merge", dag.id))
            job.state = JobState.DONE
            outputs = {j.chunk.id: j.output for j in dag.chunk_jobs}
            run.result = self.merge(dag, outputs)
            self.world.emit("MERGE_DONE", job.id, dag=dag.id, size=run.result.size, runtime=runtime)
            for fn in run.on_finish:
                fn(run)
            self._dispatch(q)

        self.world.after(runtime, end)

    def merge(self, dag: ProcessingDag, outputs: dict[str, int]) -> ProcessedDataset:
        missing = [j.chunk.id for j in dag.chunk_jobs if j.chunk.id not in outputs]
        if missing:
            raise FlowError("MISSING_CHUNK_OUTPUT", dag.id, missing=missing)
        size = sum(outputs[j.chunk.id] for j in dag.chunk_jobs)
        outputs.clear()
        site = self.world.sites[dag.site]
        if site.pool is Pool.OSG:
            location, node = "DCACHE_STAGING", self.dcache_rse
        else:
            location, node = f"STAGING:{site.attached_rse}", site.attached_rse
        gen = self._dag_count.get(dag.dataset_id, 0)
        return ProcessedDataset(dag.dataset_id, dag.run_id, size, location, node, gen)

    # -- post-processing -----------------------------------------------------

    def ship_to_rcc(self, processed: ProcessedDataset,
                    on_done: Optional[Callable[[ProcessedDataset], None]] = None) -> None:
        """Direct copy from staging to RCC, bypassing the catalog."""
        if processed.location == RCC:
            raise FlowError("ALREADY_AT_RCC", processed.run_id)
        attempts = 0

        def send() -> None:
            nonlocal attempts
            attempts += 1
            self.world.emit("SHIP_START", processed.run_id, src=processed.node, attempt=attempts)
            if self.world.transmit(processed.node, RCC, processed.size, arrive) is BLOCKED:
                failed("blocked")

        def failed(reason: str) -> None:
            self.world.emit("SHIP_FAIL", processed.run_id, reason=reason, attempt=attempts)
            if attempts <= self.max_retries:
                send()
            else:
                self.world.emit("TRANSFER_FAILED", processed.run_id)

        def arrive() -> None:
            if self.world.chance("ship-corrupt", self.ship_corrupt_prob):
                failed("checksum")
                return
            # staging copy goes away in the same event that records RCC
            processed.location = RCC
            processed.node = RCC
            self.processed[processed.run_id] = processed
            self.metadb.advance(processed.run_id, RunStatus.PROCESSED)
            self.metadb.upsert_location(processed.run_id, RCC)
            self.world.emit("SHIP_DONE", processed.run_id, size=processed.size)
            if on_done:
                on_done(processed)

        send()

    def grow_minitrees(self, run_id: str, categories: Optional[Iterable[str]] = None) -> MinitreeSet:
        if run_id not in self.processed:
            raise FlowError("NOT_PROCESSED", run_id)
        cats = list(categories) if categories is not None else list(self.minitree_categories)
        raw = self.metadb.get(run_id).size
        size = reduce_size(raw, self.minitree_ratio)
        prev = self.minitrees.get(run_id)
        mt = MinitreeSet(run_id, cats, [size] * len(cats), prev.generation + 1 if prev else 1)
        self.minitrees[run_id] = mt
        self.world.emit("MINITREES", run_id, count=len(cats), generation=mt.generation)
        return mt

    # -- triggers ------------------------------------------------------------

    def process(self, dataset_id: str, max_retries: Optional[int] = None) -> Optional[DagRun]:
        """Build, execute, ship and grow minitrees for one dataset."""
        try:
            dag = self.build_dag(dataset_id, max_retries)
        except FlowError as exc:
            if exc.code in ("NO_REPLICA", "NO_SITE", "EMPTY_DATASET"):
                self.world.emit("PROCESS_SKIPPED", dataset_id, reason=exc.code)
                return None
            raise

        def finished(run: DagRun) -> None:
            if run.result is not None:
                self.ship_to_rcc(run.result, lambda p: self.grow_minitrees(p.run_id))

        return self.execute_dag(dag, finished)

    def on_location(self, record: RunRecord, location: str) -> None:
        """Daily processing starts once the run sits on a non-buffer disk RSE."""
        rse = self.world.rses.get(location)
        if rse is None or rse.kind is not Kind.DISK or record.run_id in self.daily_started:
            return
        ds_id = self._dataset_for(record.run_id)
        if ds_id is None:
            return
        self.daily_started.add(record.run_id)
        if self.process(ds_id) is None:
            self.daily_started.discard(record.run_id)

    def reprocess_campaign(self, selector: RunFilter) -> list[DagRun]:
        """One DAG per selected run, each brokered by replica location."""
        pred = selector.matches if isinstance(selector, Selector) else selector
        runs = []
        for ds_id, ds in sorted(self.catalog.datasets.items()):
            if isinstance(selector, Selector):
                if not pred(ds):
                    continue
            elif not pred(self.metadb.get(ds.run_id)):
                continue
            try:
                dag = self.build_dag(ds_id)
            except FlowError as exc:
                self.world.emit("PROCESS_SKIPPED", ds_id, reason=exc.code)
                continue

            def finished(run: DagRun) -> None:
                if run.result is not None:
                    self.ship_to_rcc(run.result, lambda p: self.grow_minitrees(p.run_id))

            runs.append(self.execute_dag(dag, finished))
        self.world.emit("CAMPAIGN", "campaign", dags=len(runs))
        return runs

    def _dataset_for(self, run_id: str) -> Optional[str]:
        return self.catalog.by_run.get(run_id)
