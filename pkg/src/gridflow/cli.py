"""Command-line driver.

Exit codes: 0 success, 1 usage or scenario error, 2 invariant violation,
3 purge refused.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path
from typing import Optional

from .errors import FlowError
from .reports import (
    jobs_from_log,
    read_log,
    replicas_json,
    report_accounting,
    verify_tape_lines,
    wall_hours_csv,
    wall_hours_from_jobs,
)
from .scenario import ScenarioError, load_scenario
from .system import Facility

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT, EXIT_REFUSED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--scenario", default=d, help="scenario file (YAML)")
    parser.add_argument("--seed", type=int, default=d, help="override the scenario seed")
    parser.add_argument("--until", type=int, default=d, help="simulated seconds to run (default: scenario duration)")
    parser.add_argument("--out", default=d, help="report directory")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    _globals(common, suppress=True)
    p = _Parser(prog="gridflow", description="Raw-data distribution and processing simulator")
    _globals(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("validate", parents=[common], help="check a scenario file")
    sub.add_parser("simulate", parents=[common], help="run a scenario and write reports")

    rep = sub.add_parser("report", help="print one report")
    rsub = rep.add_subparsers(dest="report", required=True, parser_class=_Parser)
    for name in ("accounting", "wall-hours", "replicas", "runs"):
        r = rsub.add_parser(name, parents=[common])
        r.add_argument("--from", dest="source", help="read a previous simulate --out directory instead of re-running")

    pu = sub.add_parser("purge", parents=[common], help="purge one replica through the safety gate")
    pu.add_argument("--dataset", required=True)
    pu.add_argument("--rse", help="defaults to the LNGS buffer")
    pu.add_argument("--dry-run", action="store_true")
    pu.add_argument("--allow-non-buffer", action="store_true", help="permit purging outside the LNGS buffer")

    sub.add_parser("verify-tape", parents=[common], help="checksum every tape record")
    return p


def _facility(args) -> Facility:
    if not args.scenario:
        raise ScenarioError("USAGE", ["--scenario is required"])
    sc = load_scenario(args.scenario)
    fac = Facility(sc, seed=args.seed)
    fac.run(args.until)
    return fac


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def cmd_simulate(args) -> int:
    fac = _facility(args)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    fac.world.write_log(out / "events.jsonl")
    _write(out / "accounting.csv", report_accounting(fac.world.log).to_csv())
    rows = wall_hours_from_jobs(fac.pipeline.job_records, fac.scenario.epoch)
    _write(out / "wall_hours.csv", wall_hours_csv(rows))
    _write(out / "replicas.json", replicas_json(fac.catalog.dump()))
    _write(out / "runs.jsonl", "".join(line + "\n" for line in fac.metadb.dump_lines()))
    _write(out / "tape.txt", "".join(line + "\n" for line in
                                     verify_tape_lines(fac.catalog.datasets, fac.tape.status)))
    violations = fac.violations()
    _write(out / "violations.txt", "".join(v + "\n" for v in violations))
    digest = hashlib.sha256((out / "events.jsonl").read_bytes()).hexdigest()
    print(f"events={len(fac.world.log)} t={fac.world.now} log_sha256={digest}")
    for v in violations:
        print(f"VIOLATION {v}", file=sys.stderr)
    return EXIT_INVARIANT if violations else EXIT_OK


def cmd_report(args) -> int:
    src: Optional[Path] = Path(args.source) if getattr(args, "source", None) else None
    if args.report == "accounting":
        log = read_log(src / "events.jsonl") if src else _facility(args).world.log
        sys.stdout.write(report_accounting(log).to_csv())
    elif args.report == "wall-hours":
        if src:
            epoch = load_scenario(args.scenario).epoch if args.scenario else "2016-11-01"
            rows = wall_hours_from_jobs(jobs_from_log(read_log(src / "events.jsonl")), epoch)
        else:
            fac = _facility(args)
            rows = wall_hours_from_jobs(fac.pipeline.job_records, fac.scenario.epoch)
        sys.stdout.write(wall_hours_csv(rows))
    elif args.report == "replicas":
        sys.stdout.write((src / "replicas.json").read_text() if src else replicas_json(_facility(args).catalog.dump()))
    elif args.report == "runs":
        if src:
            sys.stdout.write((src / "runs.jsonl").read_text())
        else:
            for line in _facility(args).metadb.dump_lines():
                print(line)
    return EXIT_OK


def cmd_purge(args) -> int:
    fac = _facility(args)
    rse = args.rse or fac.world.buffer.id
    if args.dataset not in fac.catalog.datasets:
        print(f"unknown dataset {args.dataset}", file=sys.stderr)
        return EXIT_USAGE
    report = fac.policy.check_safety(args.dataset)
    try:
        verdict = fac.policy.purge_eligible(args.dataset, rse, override=args.allow_non_buffer)
        reasons = verdict.reasons
    except FlowError as exc:
        reasons = ["NO_REPLICA"] if exc.code == "NO_REPLICA_AT_RSE" else [exc.code]
    print(f"dataset {args.dataset} rse {rse}")
    print(f"safety {'satisfied' if report.satisfied else 'unsatisfied'}"
          + (f" missing: {', '.join(report.missing)}" if report.missing else ""))
    print(f"eligible {'yes' if not reasons else 'no'}" + (f" reasons: {', '.join(reasons)}" if reasons else ""))
    if reasons:
        return EXIT_REFUSED
    if not args.dry_run:
        fac.policy.purge(args.dataset, rse, override=args.allow_non_buffer)
        print("purged")
    return EXIT_OK


def cmd_verify_tape(args) -> int:
    fac = _facility(args)
    for ds in sorted(fac.catalog.datasets):
        if ds in fac.tape.records and fac.tape.records[ds].archived:
            fac.tape.verify(ds)
    for line in verify_tape_lines(fac.catalog.datasets, fac.tape.status):
        print(line)
    return EXIT_OK


def cmd_validate(args) -> int:
    if not args.scenario:
        raise ScenarioError("USAGE", ["--scenario is required"])
    sc = load_scenario(args.scenario)
    print(f"ok: {len(sc.rses)} rses, {len(sc.sites)} sites, {len(sc.run_plan.entries)} run-plan entries, "
          f"{len(sc.run_plan.schedule())} runs planned")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "report": cmd_report,
    "purge": cmd_purge,
    "verify-tape": cmd_verify_tape,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        for err in exc.errors:
            print(f"{exc.code}: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
