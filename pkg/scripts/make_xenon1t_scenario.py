"""Regenerate scenarios/xenon1t.cfg from the preset builder."""

import argparse
from pathlib import Path

import yaml

from gridflow.presets import xenon1t


class _Dumper(yaml.SafeDumper):
    pass


def _list(dumper, data):
    flow = all(not isinstance(x, (dict, list)) for x in data)
    return dumper.represent_sequence("tag:yaml.org,2002:seq", data, flow_style=flow)


_Dumper.add_representer(list, _list)

HEADER = """\
# Scaled XENON1T-like world: every volume is 1e-6 of the real one, so the
# 50 TB LNGS buffer is 50 MB and per-source volumes read directly in MB.
# Generated by scripts/make_xenon1t_scenario.py; schema in docs/scenario.md.
"""


def render(days: int = 180) -> str:
    return HEADER + yaml.dump(xenon1t(days), Dumper=_Dumper, sort_keys=False, width=100)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "scenarios" / "xenon1t.cfg"))
    args = ap.parse_args()
    Path(args.out).write_text(render())
    print(f"wrote {args.out}")
