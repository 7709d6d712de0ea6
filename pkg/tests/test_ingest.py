from hypothesis import given, settings
from hypothesis import strategies as st

from gridflow.ingest import RUN_LENGTH, RunPlanEntry
from gridflow.metadb import RunStatus
from gridflow.presets import topology
from gridflow.reports import occupancy_series
from gridflow.simgrid import DAY, HOUR

from conftest import make_facility

MB = 10 ** 6


def plan(*entries, duration=DAY):
    return {"start": 0, "duration": duration, "entries": list(entries)}


def entry(at=None, per_day=None, events=100, bpe=1000, science=False, source="LED"):
    e = {"source": source, "science": science, "events_per_run": events, "bytes_per_event": bpe}
    if at is not None:
        e["at"] = at
    else:
        e["runs_per_day"] = per_day
    return e


def test_run_size_is_events_times_bytes():
    e = RunPlanEntry("DARK_MATTER", True, 20_000, 10 ** 6, at=[0])
    assert e.run_size == 20 * 10 ** 9


def test_run_lands_after_one_hour():
    fac = make_facility(**topology(buffer_bytes=50 * 10 ** 12, throughput=200),
                        run_plan=plan(entry(at=[0], events=20_000, bpe=10 ** 6, science=True, source="DARK_MATTER")))
    fac.world.run_until(RUN_LENGTH - 1)
    rec = fac.metadb.get("run_000000")
    assert rec.status is RunStatus.TAKING
    assert fac.ingest.state().used == 20 * 10 ** 9 and fac.world.buffer.used == 0
    fac.world.run_until(RUN_LENGTH)
    assert fac.world.buffer.used == 20 * 10 ** 9
    kinds = [e.kind for e in fac.world.log if e.time == RUN_LENGTH]
    assert kinds.index("REGISTER") < kinds.index("ARCHIVE_START")


def test_overflow_halts():
    fac = make_facility(**topology(buffer_bytes=10 * MB), run_plan=plan(entry(at=[0, 10, 20], events=4000)))
    fac.world.run_until(30)
    kinds = [e.kind for e in fac.world.log]
    assert kinds.count("HALT") == 1 and kinds.count("RUN_SKIPPED") == 1
    assert fac.ingest.state().halted and fac.ingest.skipped == 1
    assert fac.ingest.state().used <= fac.world.buffer.capacity


def test_runs_keep_landing_during_outage():
    fac = make_facility(run_plan=plan(entry(at=[0, HOUR, 2 * HOUR])),
                        faults={"total_outages": [[0, DAY]]})
    fac.world.run_until(DAY - 1)
    assert fac.world.buffer.used == 3 * 100_000
    assert not [e for e in fac.world.log if e.kind in ("TRANSFER_DONE", "ARCHIVE_DONE")]
    fac.world.run()
    assert all(r.status.rank >= RunStatus.SAFE.rank for r in fac.metadb.query())


def test_drain_check_empty():
    fac = make_facility()
    report = fac.ingest.drain_check()
    assert report["used"] == 0 and report["purge_eligible"] == []


def test_drain_check_lists_eligible_runs():
    fac = make_facility(run_plan=plan(entry(at=[0])), policy={"lngs_lifetime": None})
    fac.world.run()
    assert fac.ingest.drain_check()["purge_eligible"] == ["run_000000"]


def test_steady_state_is_about_four_days_of_ingest():
    per_day, size = 24, 100 * 1000
    fac = make_facility(run_plan=plan(entry(per_day=per_day), duration=12 * DAY), duration=12 * DAY)
    fac.world.run_until(10 * DAY)
    used = fac.ingest.drain_check()["used"]
    four_days = 4 * per_day * size
    assert abs(used - four_days) <= per_day * size // 24 * 2


def test_recovery_after_outage_drops_below_steady_level():
    # purging needs no network, so only an outage outlasting the lifetime holds expiries back
    per_day = 24
    fac = make_facility(run_plan=plan(entry(per_day=per_day), duration=20 * DAY), duration=25 * DAY,
                        faults={"total_outages": [[3 * DAY, 8 * DAY]]})
    fac.world.run()
    series = occupancy_series(fac.world.log, fac.world.buffer.id)
    steady = 4 * per_day * 100_000
    peak_t, peak = max(series, key=lambda p: p[1])
    assert peak > steady
    assert any(t > peak_t and used <= steady for t, used in series)


def test_resume_after_halt():
    fac = make_facility(**topology(buffer_bytes=10 * MB),
                        run_plan=plan(entry(at=[0, 10, 20, 2 * DAY], events=4000), duration=3 * DAY),
                        policy={"lngs_lifetime": 2 * HOUR})
    fac.world.run()
    kinds = [(e.kind, e.time) for e in fac.world.log if e.kind in ("HALT", "RESUME", "RUN_START")]
    assert [k for k, _ in kinds] == ["RUN_START", "RUN_START", "HALT", "RESUME", "RUN_START"]
    assert kinds[3][1] < 2 * DAY


@given(runs=st.lists(st.tuples(st.integers(0, 2 * DAY), st.integers(1, 40)), min_size=1, max_size=12),
       cap=st.integers(1, 20))
@settings(max_examples=40, deadline=None)
def test_every_run_taken_before_halt_becomes_safe(runs, cap):
    entries = [entry(at=[t], events=ev * 100, bpe=1000) for t, ev in runs]
    fac = make_facility(**topology(buffer_bytes=cap * MB, throughput=200),
                        run_plan=plan(*entries, duration=3 * DAY), duration=40 * DAY)
    fac.world.run()
    taken = {e.subject for e in fac.world.log if e.kind == "RUN_START"}
    skipped = [e for e in fac.world.log if e.kind == "RUN_SKIPPED"]
    assert len(taken) + len(skipped) == len(runs)
    assert fac.ingest.state().used <= cap * MB
    assert {e.subject for e in fac.world.log if e.kind == "SAFE"} == taken
