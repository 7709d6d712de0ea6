"""Ready-made scenario documents.

All volumes are scaled by 1e-6: one real terabyte is one simulated megabyte,
so the 50 TB buffer is 50 MB here and the per-source volumes read directly in MB.
"""

from __future__ import annotations

import random
from decimal import Decimal
from typing import Optional

from .simgrid import DAY, HOUR

SCALE = Decimal("1e-6")
BUFFER_BYTES = 50 * 10 ** 6
EU_RSES = ("CCIN2P3", "CNAF", "NIKHEF", "SURFSARA", "WEIZMANN")

# (source, total MB, science MB); MB here stands for TB before scaling
SOURCE_VOLUMES = [
    ("DARK_MATTER", "414.69", "232.64"),
    ("LED", "37.37", "0.0"),
    ("CS137", "8.47", "0.36"),
    ("KR83M", "62.25", "29.9"),
    ("RN220", "91.14", "25.64"),
    ("AMBE241", "68.71", "62.54"),
    ("TH228", "3.01", "0.0"),
    ("NEUTRON_GENERATOR", "54.5", "10.94"),
    ("MUON_VETO", "2.73", "0.0"),
]


def topology(buffer_bytes: int = BUFFER_BYTES, bandwidth: int = 2000, failure_prob: float = 0.0,
             throughput: int = 20) -> dict:
    """Storage elements, links and compute sites modelled on the real layout."""
    rses = [{"id": "LNGS_BUFFER", "region": "LNGS", "kind": "BUFFER", "capacity": buffer_bytes},
            {"id": "UC_DCACHE", "region": "US", "kind": "DISK", "capacity": 2 * 10 ** 9}]
    rses += [{"id": r, "region": "EUROPE", "kind": "DISK", "capacity": 10 ** 9} for r in EU_RSES]
    rses.append({"id": "PDC_TAPE", "region": "NORDIC", "kind": "TAPE", "capacity": None})
    links = [{"src": "LNGS_BUFFER", "dst": r["id"], "bandwidth": bandwidth, "latency": 1}
             for r in rses if r["id"] != "LNGS_BUFFER"]
    sites = [
        {"id": "OSG_COMET", "pool": "OSG", "attached_rse": "UC_DCACHE", "slots": 20},
        {"id": "OSG_UCHICAGO", "pool": "OSG", "attached_rse": "UC_DCACHE", "slots": 40},
    ]
    sites += [{"id": f"EGI_{r}", "pool": "EGI", "attached_rse": r, "slots": 20} for r in EU_RSES]
    for s in sites:
        s["job_failure_prob"] = failure_prob
        s["throughput"] = throughput
    return {
        "rses": rses,
        "links": links,
        "default_link": {"bandwidth": bandwidth // 2, "latency": 2},
        "sites": sites,
    }


def _split(nbytes: int, prefer_events=(5000, 2000, 10000, 1000, 20000, 500, 100),
           max_run: int = 6 * 10 ** 6) -> tuple[int, int, int]:
    """Pick (runs, events_per_run, bytes_per_event) multiplying to ``nbytes`` exactly."""
    for ev in prefer_events:
        for n in range(max(1, -(-nbytes // max_run)), 2000):
            if nbytes % (n * ev) == 0:
                return n, ev, nbytes // (n * ev)
    raise ValueError(f"cannot split {nbytes} bytes into whole runs")


def volume_plan(days: int = 180) -> dict:
    """Run plan whose ingested volumes equal the scaled per-source volumes exactly."""
    entries = []
    span = days * DAY
    for source, total, science in SOURCE_VOLUMES:
        sci = int(Decimal(science) * 10 ** 6)
        non = int(Decimal(total) * 10 ** 6) - sci
        for flag, nbytes in ((True, sci), (False, non)):
            if nbytes == 0:
                continue
            n, ev, bpe = _split(nbytes)
            # golden-ratio phases keep the entries from starting together
            phase = int(((len(entries) * 0.6180339887) % 1.0) * (span // n)) // HOUR * HOUR
            at = [phase + (i * span) // n for i in range(n)]
            entries.append({"source": source, "science": flag, "events_per_run": ev,
                            "bytes_per_event": bpe, "at": at})
    return {"start": 0, "duration": span, "entries": entries}


def xenon1t(days: int = 180, drain_days: int = 10, seed: int = 1) -> dict:
    doc = {"seed": seed, "epoch": "2016-11-01", "duration": (days + drain_days) * DAY}
    doc.update(topology())
    doc["run_plan"] = volume_plan(days)
    doc["policy"] = {"chunk_size": 100, "lngs_lifetime": 4 * DAY, "max_retries": 3,
                     "reduction_ratio": "0.1", "minitree_ratio": "0.001",
                     "mirror_lags": {"CHICAGO": 120, "STOCKHOLM": 300}}
    doc["campaigns"] = [{"at": 120 * DAY, "science": True}]
    return doc


def random_scenario(seed: int, faults: bool = False, runs: Optional[int] = None,
                    days: int = 3, horizon_days: int = 20) -> dict:
    """Small randomized world for fuzzing and convergence checks.

    Without ``faults`` the only disturbances are transient (finite outages,
    corrupt transfers that get retried, bad tape writes that get redone).
    With ``faults`` job failures and post-archive tape corruption are added.
    """
    rng = random.Random(seed)
    doc = {"seed": seed, "duration": horizon_days * DAY}
    doc.update(topology(bandwidth=rng.choice([500, 1000, 2000]), throughput=200,
                        failure_prob=rng.choice([0.0, 0.1, 0.3]) if faults else 0.0))
    sources = [row[0] for row in SOURCE_VOLUMES]
    n_runs = runs if runs is not None else rng.randint(1, 5)
    entries = []
    for _ in range(n_runs):
        entries.append({
            "source": rng.choice(sources),
            "science": rng.random() < 0.5,
            "events_per_run": rng.randint(1, 6) * 100 - rng.choice([0, 0, 37]),
            "bytes_per_event": rng.choice([500, 1000, 2000]),
            "at": [rng.randrange(days * DAY)],
        })
    doc["run_plan"] = {"start": 0, "duration": days * DAY, "entries": entries}
    outages = []
    t = rng.randrange(DAY)
    for _ in range(rng.randint(0, 3)):
        length = rng.randint(HOUR, 2 * DAY)
        outages.append([t, t + length])
        t += length + rng.randint(HOUR, 2 * DAY)
    for link in doc["links"]:
        if rng.random() < 0.3:
            s = rng.randrange(days * DAY)
            link["outages"] = [[s, s + rng.randint(60, DAY)]]
    f = {
        "total_outages": outages,
        "transfer_corrupt_prob": rng.choice([0.0, 0.1, 0.3]),
        "tape_corrupt_prob": rng.choice([0.0, 0.1, 0.3]),
    }
    if faults:
        f["tape_corruptions"] = [
            {"at": rng.randrange(horizon_days * DAY), "dataset": f"run_{rng.randrange(n_runs):06d}"}
            for _ in range(rng.randint(0, 2))
        ]
    doc["faults"] = f
    doc["policy"] = {"max_retries": 3}
    return doc
