"""Empirical DAG failure rate against the closed form 1 - (1 - p^(r+1))^n.

Each trial processes one 200-chunk run on a single OSG site whose jobs fail
independently with probability p. Prints the observed rate, the closed-form
value and a 99% Clopper-Pearson interval.
"""

import argparse

from scipy.stats import binomtest

from gridflow.catalog import Dataset
from gridflow.metadb import RunRecord, RunStatus, Source
from gridflow.pipeline import chunk_run
from gridflow.presets import topology
from gridflow.scenario import parse_scenario
from gridflow.simgrid import DAY
from gridflow.system import Facility


def one_trial(seed: int, p: float, retries: int, events: int, chunk_size: int) -> bool:
    doc = {"seed": seed, "duration": 30 * DAY, **topology(throughput=200)}
    doc["sites"] = [{"id": "OSG_X", "pool": "OSG", "attached_rse": "UC_DCACHE", "slots": 100,
                     "job_failure_prob": p, "throughput": 1000}]
    doc["run_plan"] = {"start": 0, "duration": DAY, "entries": []}
    doc["policy"] = {"daily_processing": False, "max_retries": retries, "chunk_size": chunk_size}
    fac = Facility(parse_scenario(doc), rules_enabled=False)

    rec = RunRecord("r", Source.DARK_MATTER, True, events, events * 100)
    fac.metadb.insert(rec)
    fac.metadb.set_status("r", RunStatus.ON_BUFFER)
    chunks = chunk_run(rec, chunk_size)
    fac.catalog.register(Dataset("r", "r", rec.size, [c.id for c in chunks], [c.size for c in chunks],
                                 source=rec.source.value, science=True), fac.world.buffer.id)
    fac.catalog.begin_copy("r", "UC_DCACHE", fac.world.buffer.id)
    fac.catalog.complete_transfer("r", "UC_DCACHE", True)
    run = fac.pipeline.execute_dag(fac.pipeline.build_dag("r"))
    fac.world.run()
    return run.error is not None


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--p", type=float, default=0.2)
    ap.add_argument("--retries", type=int, default=5)
    ap.add_argument("--events", type=int, default=20_000)
    ap.add_argument("--chunk-size", type=int, default=100)
    args = ap.parse_args()

    n_chunks = len(chunk_run(RunRecord("r", Source.DARK_MATTER, True, args.events, 1), args.chunk_size))
    failed = sum(one_trial(s, args.p, args.retries, args.events, args.chunk_size) for s in range(args.trials))
    expected = 1 - (1 - args.p ** (args.retries + 1)) ** n_chunks
    ci = binomtest(failed, args.trials).proportion_ci(confidence_level=0.99)
    inside = ci.low <= expected <= ci.high
    print(f"chunks={n_chunks} trials={args.trials} failed={failed} rate={failed / args.trials:.5f}")
    print(f"closed form={expected:.5f}  99% CI=[{ci.low:.5f}, {ci.high:.5f}]  {'inside' if inside else 'OUTSIDE'}")


if __name__ == "__main__":
    main()
