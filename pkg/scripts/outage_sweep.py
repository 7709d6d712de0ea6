"""Peak buffer occupancy and HALT behaviour as a function of total-outage length.

Runs the xenon1t world with a single total outage starting at --start days
and prints one CSV row per outage length.
"""

import argparse

from gridflow.presets import xenon1t
from gridflow.reports import occupancy_series
from gridflow.scenario import parse_scenario
from gridflow.simgrid import DAY
from gridflow.system import Facility


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--start", type=int, default=60, help="outage start, days")
    ap.add_argument("--lengths", type=int, nargs="+", default=[0, 2, 4, 6, 8, 12, 16, 20])
    args = ap.parse_args()

    print("outage_days,peak_bytes,peak_fraction,halts,skipped,safe,violations")
    for days in args.lengths:
        doc = xenon1t()
        if days:
            doc["faults"] = {"total_outages": [[args.start * DAY, (args.start + days) * DAY]]}
        fac = Facility(parse_scenario(doc))
        fac.run()
        log = fac.world.log
        peak = max(u for _, u in occupancy_series(log, fac.world.buffer.id))
        kinds = [e.kind for e in log]
        print(f"{days},{peak},{peak / fac.world.buffer.capacity:.3f},{kinds.count('HALT')},"
              f"{kinds.count('RUN_SKIPPED')},{kinds.count('SAFE')},{len(fac.violations())}")


if __name__ == "__main__":
    main()
