"""Scenario files: YAML documents describing one world and its run plan.

See ``docs/scenario.md`` for the schema. :func:`load_scenario` parses and
validates a file, reporting every problem it finds rather than the first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional

import yaml

from .catalog import Destination, Selector, TransferRule
from .errors import FlowError
from .ingest import RunPlan, RunPlanEntry
from .metadb import Source
from .pipeline import DEFAULT_MINITREES
from .simgrid import DAY, HOUR, ComputeSite, Kind, NetworkLink, Pool, Region, StorageElement

RCC_NODE = "RCC"


class ScenarioError(FlowError):
    def __init__(self, code: str, errors: list[str]):
        self.errors = errors
        super().__init__(code, "; ".join(errors), errors=errors)


@dataclass
class PolicyConfig:
    chunk_size: int = 100
    lngs_lifetime: Optional[int] = 4 * DAY
    max_retries: int = 3
    reduction_ratio: Fraction = Fraction(1, 10)
    minitree_ratio: Fraction = Fraction(1, 1000)
    mirror_lags: dict[str, int] = field(default_factory=lambda: {"STOCKHOLM": 60, "CHICAGO": 60})
    purge_retry: int = 6 * HOUR
    resume_fraction: float = 0.9
    dcache_rse: str = "UC_DCACHE"
    minitree_categories: list[str] = field(default_factory=lambda: list(DEFAULT_MINITREES))
    daily_processing: bool = True


@dataclass
class Faults:
    total_outages: list[tuple[int, Optional[int]]] = field(default_factory=list)
    transfer_corrupt_prob: float = 0.0
    tape_corrupt_prob: float = 0.0
    ship_corrupt_prob: float = 0.0
    job_failures: list[tuple[str, int, int]] = field(default_factory=list)
    forced_purges: list[tuple[int, str, str]] = field(default_factory=list)
    replica_losses: list[tuple[int, str, str]] = field(default_factory=list)
    tape_corruptions: list[tuple[int, str]] = field(default_factory=list)


@dataclass
class Campaign:
    at: int
    selector: Selector


@dataclass
class Scenario:
    seed: int
    duration: int
    rses: list[dict]
    links: list[dict]
    sites: list[dict]
    run_plan: RunPlan
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    default_link: Optional[tuple[int, int]] = None
    rules: Optional[list[TransferRule]] = None  # None means the standard safety rules
    faults: Faults = field(default_factory=Faults)
    campaigns: list[Campaign] = field(default_factory=list)
    epoch: str = "2016-11-01"

    def make_rses(self) -> list[StorageElement]:
        return [StorageElement(r["id"], Region(r["region"]), Kind(r["kind"]), r.get("capacity")) for r in self.rses]

    def make_links(self) -> list[NetworkLink]:
        return [
            NetworkLink(l["src"], l["dst"], l["bandwidth"], l.get("latency", 0),
                        [tuple(w) for w in l.get("outages", [])])
            for l in self.links
        ]

    def make_sites(self) -> list[ComputeSite]:
        return [
            ComputeSite(s["id"], Pool(s["pool"]), s["attached_rse"], s["slots"],
                        s.get("job_failure_prob", 0.0), s.get("throughput", 1))
            for s in self.sites
        ]

    def standard_rules(self) -> list[TransferRule]:
        return [
            TransferRule(Selector(science=True), Destination.specific(self.policy.dcache_rse), 1, id="science-dcache"),
            TransferRule(Selector(), Destination.random_in_region(Region.EUROPE), 1, id="any-europe"),
        ]

    @property
    def has_science(self) -> bool:
        return any(e.science for e in self.run_plan.entries)


# -- parsing -----------------------------------------------------------------


def _int(errors: list[str], where: str, value: Any, minimum: Optional[int] = None,
         allow_none: bool = False) -> Optional[int]:
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        errors.append(f"{where}: expected integer, got {value!r}")
        return None
    if minimum is not None and value < minimum:
        errors.append(f"{where}: must be >= {minimum}")
    return value


def _enum(errors: list[str], where: str, enum_cls, value: Any):
    try:
        return enum_cls(value)
    except ValueError:
        errors.append(f"{where}: {value!r} not one of {[m.value for m in enum_cls]}")
        return None


def _windows(errors: list[str], where: str, raw: Any) -> list[tuple[int, Optional[int]]]:
    out: list[tuple[int, Optional[int]]] = []
    for k, w in enumerate(raw or []):
        if not isinstance(w, (list, tuple)) or len(w) != 2:
            errors.append(f"{where}[{k}]: expected [start, end]")
            continue
        s = _int(errors, f"{where}[{k}].start", w[0], 0)
        e = _int(errors, f"{where}[{k}].end", w[1], 0, allow_none=True)
        if s is None:
            continue
        if e is not None and e <= s:
            errors.append(f"{where}[{k}]: end must be after start")
        if out and (out[-1][1] is None or s < out[-1][1]):
            errors.append(f"{where}[{k}]: outage windows must be sorted and non-overlapping")
        out.append((s, e))
    return out


def _selector(raw: dict) -> Selector:
    sources = raw.get("sources")
    return Selector(raw.get("science"), frozenset(Source(s).value for s in sources) if sources else None)


def parse_scenario(doc: Any) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("PARSE_ERROR", ["top level must be a mapping"])
    errors: list[str] = []
    for key in ("seed", "duration", "rses", "run_plan"):
        if key not in doc:
            errors.append(f"{key}: required field missing")

    seed = _int(errors, "seed", doc.get("seed", 0), 0)
    if seed is not None and seed >= 2 ** 64:
        errors.append("seed: must fit in 64 unsigned bits")
    duration = _int(errors, "duration", doc.get("duration", 0), 0)

    # storage elements
    rses, ids = [], set()
    for i, r in enumerate(doc.get("rses") or []):
        where = f"rses[{i}]"
        rid = r.get("id")
        if not rid:
            errors.append(f"{where}.id: required")
            continue
        if rid in ids:
            errors.append(f"{where}.id: duplicate {rid!r}")
        if rid == RCC_NODE:
            errors.append(f"{where}.id: {RCC_NODE!r} is reserved for the analysis cluster")
        ids.add(rid)
        region = _enum(errors, f"{where}.region", Region, r.get("region"))
        kind = _enum(errors, f"{where}.kind", Kind, r.get("kind"))
        cap = _int(errors, f"{where}.capacity", r.get("capacity"), 1, allow_none=(kind is Kind.TAPE))
        rses.append({"id": rid, "region": region, "kind": kind, "capacity": cap})
    buffers = [r for r in rses if r["kind"] is Kind.BUFFER]
    if len([b for b in buffers if b["region"] is Region.LNGS]) != 1 or len(buffers) != 1:
        errors.append(f"rses: exactly one BUFFER in region LNGS required, found {len(buffers)} buffer(s)")
    if len([r for r in rses if r["kind"] is Kind.TAPE]) != 1:
        errors.append("rses: exactly one TAPE endpoint required")
    if not any(r["kind"] is Kind.DISK and r["region"] is Region.EUROPE for r in rses):
        errors.append("rses: at least one EUROPE disk RSE required")
    kinds = {r["id"]: r["kind"] for r in rses}

    # links
    links = []
    for i, l in enumerate(doc.get("links") or []):
        where = f"links[{i}]"
        for end in ("src", "dst"):
            if l.get(end) not in ids and l.get(end) != RCC_NODE:
                errors.append(f"{where}.{end}: undeclared RSE {l.get(end)!r}")
        bw = _int(errors, f"{where}.bandwidth", l.get("bandwidth"), 1)
        lat = _int(errors, f"{where}.latency", l.get("latency", 0), 0)
        outages = _windows(errors, f"{where}.outages", l.get("outages"))
        links.append({"src": l.get("src"), "dst": l.get("dst"), "bandwidth": bw, "latency": lat, "outages": outages})
    default_link = None
    if doc.get("default_link") is not None:
        d = doc["default_link"]
        bw = _int(errors, "default_link.bandwidth", d.get("bandwidth"), 1)
        lat = _int(errors, "default_link.latency", d.get("latency", 0), 0)
        default_link = (bw, lat)

    # compute sites
    sites, site_ids = [], set()
    for i, s in enumerate(doc.get("sites") or []):
        where = f"sites[{i}]"
        sid = s.get("id")
        if not sid or sid in site_ids:
            errors.append(f"{where}.id: missing or duplicate")
        site_ids.add(sid)
        pool = _enum(errors, f"{where}.pool", Pool, s.get("pool"))
        if s.get("attached_rse") not in ids:
            errors.append(f"{where}.attached_rse: undeclared RSE {s.get('attached_rse')!r}")
        slots = _int(errors, f"{where}.slots", s.get("slots"), 1)
        p = s.get("job_failure_prob", 0.0)
        if not isinstance(p, (int, float)) or not 0 <= p <= 1:
            errors.append(f"{where}.job_failure_prob: must be in [0, 1]")
        thr = _int(errors, f"{where}.throughput", s.get("throughput", 1), 1)
        sites.append({"id": sid, "pool": pool, "attached_rse": s.get("attached_rse"), "slots": slots,
                      "job_failure_prob": float(p) if isinstance(p, (int, float)) else 0.0, "throughput": thr})

    # run plan
    rp = doc.get("run_plan") or {}
    entries = []
    for i, e in enumerate(rp.get("entries") or []):
        where = f"run_plan.entries[{i}]"
        try:
            entries.append(RunPlanEntry(
                source=e.get("source"),
                science=bool(e.get("science", False)),
                events_per_run=e.get("events_per_run", 0),
                bytes_per_event=e.get("bytes_per_event", 0),
                runs_per_day=e.get("runs_per_day"),
                at=e.get("at"),
            ))
        except (FlowError, ValueError, TypeError) as exc:
            errors.append(f"{where}: {exc}")
    plan = RunPlan(entries, _int(errors, "run_plan.start", rp.get("start", 0), 0) or 0,
                   _int(errors, "run_plan.duration", rp.get("duration", DAY), 1) or DAY)

    # policy
    pol = PolicyConfig()
    for key, value in (doc.get("policy") or {}).items():
        if not hasattr(pol, key):
            errors.append(f"policy.{key}: unknown field")
            continue
        if key in ("reduction_ratio", "minitree_ratio"):
            try:
                value = Fraction(str(value))
            except ValueError:
                errors.append(f"policy.{key}: not a number")
                continue
            if not 0 < value <= 1:
                errors.append(f"policy.{key}: must be in (0, 1]")
        setattr(pol, key, value)
    _int(errors, "policy.chunk_size", pol.chunk_size, 1)
    _int(errors, "policy.max_retries", pol.max_retries, 0)
    _int(errors, "policy.lngs_lifetime", pol.lngs_lifetime, 0, allow_none=True)
    if any(e.science for e in entries) and pol.dcache_rse not in ids:
        errors.append(f"rses: science runs planned but {pol.dcache_rse!r} is not declared")

    # rules
    rules = None
    if doc.get("rules") is not None:
        rules = []
        for i, r in enumerate(doc["rules"]):
            where = f"rules[{i}]"
            dest = r.get("destination") or {}
            if "specific" in dest:
                if kinds.get(dest["specific"]) is not Kind.DISK:
                    errors.append(f"{where}.destination: {dest['specific']!r} is not a declared disk RSE")
                d = Destination.specific(dest["specific"])
            elif "random_in_region" in dest:
                if _enum(errors, f"{where}.destination", Region, dest["random_in_region"]) is None:
                    continue
                d = Destination.random_in_region(dest["random_in_region"])
            else:
                errors.append(f"{where}.destination: need 'specific' or 'random_in_region'")
                continue
            copies = _int(errors, f"{where}.copies", r.get("copies", 1), 1)
            try:
                sel = _selector(r.get("selector") or {})
            except ValueError as exc:
                errors.append(f"{where}.selector: {exc}")
                continue
            rules.append(TransferRule(sel, d, copies or 1, r.get("lifetime"), r.get("id", f"rule-{i}")))

    # faults
    f = doc.get("faults") or {}
    faults = Faults(
        total_outages=_windows(errors, "faults.total_outages", f.get("total_outages")),
        transfer_corrupt_prob=float(f.get("transfer_corrupt_prob", 0.0)),
        tape_corrupt_prob=float(f.get("tape_corrupt_prob", 0.0)),
        ship_corrupt_prob=float(f.get("ship_corrupt_prob", 0.0)),
        job_failures=[(x["dataset"], x["chunk"], x.get("attempt", 1)) for x in f.get("job_failures", [])],
        forced_purges=[(x["at"], x["dataset"], x["rse"]) for x in f.get("forced_purges", [])],
        replica_losses=[(x["at"], x["dataset"], x["rse"]) for x in f.get("replica_losses", [])],
        tape_corruptions=[(x["at"], x["dataset"]) for x in f.get("tape_corruptions", [])],
    )
    for name in ("transfer_corrupt_prob", "tape_corrupt_prob", "ship_corrupt_prob"):
        if not 0 <= getattr(faults, name) <= 1:
            errors.append(f"faults.{name}: must be in [0, 1]")

    campaigns = []
    for i, c in enumerate(doc.get("campaigns") or []):
        at = _int(errors, f"campaigns[{i}].at", c.get("at"), 0)
        try:
            campaigns.append(Campaign(at or 0, _selector(c)))
        except ValueError as exc:
            errors.append(f"campaigns[{i}]: {exc}")

    if errors:
        raise ScenarioError("SEMANTIC_ERROR", errors)
    return Scenario(
        seed=seed, duration=duration, rses=rses, links=links, sites=sites, run_plan=plan, policy=pol,
        default_link=default_link, rules=rules, faults=faults, campaigns=campaigns,
        epoch=str(doc.get("epoch", "2016-11-01")),
    )


def load_scenario(path: str | Path) -> Scenario:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ScenarioError("PARSE_ERROR", [str(exc)]) from None
    return parse_scenario(doc)
