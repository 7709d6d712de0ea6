"""The trace monitor must flag hand-written bad traces and pass clean ones."""

from gridflow.invariants import check_trace
from gridflow.simgrid import EventLogEntry as E

KINDS = {"LNGS_BUFFER": "BUFFER", "CNAF": "DISK", "UC_DCACHE": "DISK", "PDC_TAPE": "TAPE"}


def good_prefix():
    return [
        E(0, "REGISTER", "d", {"rse": "LNGS_BUFFER", "size": 5}),
        E(0, "ARCHIVE_START", "d", {"size": 5}),
        E(1, "TRANSFER_START", "d", {"src": "LNGS_BUFFER", "dst": "CNAF", "size": 5}),
        E(2, "ARCHIVE_DONE", "d", {}),
        E(2, "TAPE_VERIFY", "d", {"ok": True}),
        E(3, "TRANSFER_DONE", "d", {"dst": "CNAF"}),
    ]


def test_clean_trace():
    log = good_prefix() + [E(9, "PURGE", "d", {"rse": "LNGS_BUFFER", "size": 5})]
    assert check_trace(log, KINDS) == []


def test_purge_without_offsite_copy():
    log = good_prefix()[:5] + [E(9, "PURGE", "d", {"rse": "LNGS_BUFFER", "size": 5})]
    bad = check_trace(log, KINDS)
    assert len(bad) == 1 and "gate false" in bad[0]


def test_purge_of_last_copy_with_bad_tape():
    log = good_prefix() + [
        E(4, "TAPE_CORRUPT", "d", {}),
        E(5, "REPLICA_LOST", "d", {"rse": "CNAF"}),
        E(9, "PURGE", "d", {"rse": "LNGS_BUFFER", "size": 5}),
    ]
    bad = check_trace(log, KINDS)
    assert any("gate false" in b for b in bad) and any("last recoverable copy" in b for b in bad)


def test_purging_the_only_offsite_copy_itself_is_flagged():
    log = good_prefix() + [E(9, "PURGE", "d", {"rse": "CNAF", "size": 5})]
    assert check_trace(log, KINDS)


def test_done_without_start():
    bad = check_trace([E(1, "ARCHIVE_DONE", "x", {}), E(2, "SHIP_DONE", "x", {})], KINDS)
    assert len(bad) == 2


def test_time_going_backwards():
    assert check_trace([E(5, "A", "x", {}), E(4, "B", "x", {})], KINDS)


def _dag(chunks=2, retries=1):
    return [E(0, "DAG_SUBMIT", "d@1", {"site": "S", "pool": "OSG", "chunks": chunks, "max_retries": retries})]


def test_retry_bound():
    log = _dag(retries=1) + [E(t, "JOB_START", "d@1#0", {"dag": "d@1"}) for t in range(3)]
    assert len(check_trace(log, KINDS)) == 1


def test_merge_barrier():
    log = _dag() + [
        E(1, "JOB_START", "d@1#0", {"dag": "d@1"}),
        E(1, "JOB_START", "d@1#1", {"dag": "d@1"}),
        E(2, "JOB_DONE", "d@1#0", {"dag": "d@1"}),
        E(3, "MERGE_START", "d@1#merge", {"dag": "d@1"}),
    ]
    assert any("before every chunk" in b for b in check_trace(log, KINDS))
    ok = log[:-1] + [E(4, "JOB_DONE", "d@1#1", {"dag": "d@1"}),
                     E(4, "MERGE_START", "d@1#merge", {"dag": "d@1"}),
                     E(9, "MERGE_DONE", "d@1#merge", {"dag": "d@1"})]
    assert check_trace(ok, KINDS) == []
