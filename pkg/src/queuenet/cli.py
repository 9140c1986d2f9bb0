"""Command line: ``run``, ``compare`` and ``validate`` verbs."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from typing import List, Optional

from .engine import CONTROLLERS, run
from .errors import QueueNetError
from .experiment import ExperimentSpec, compare, format_delay_table, write_run
from .metrics import littles_law_check, stability_estimate
from .scenario import load_scenario, serialize_scenario
from .traffic import DEMAND_TIERS


def _seeds(text: str) -> List[int]:
    """``"0,1,4"`` or a range ``"0-4"``."""
    out: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1) if not part.startswith("-") else (part, part)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("no seeds given")
    return out


def _list(choices):
    def parse(text: str) -> List[str]:
        items = [x.strip() for x in text.split(",") if x.strip()]
        bad = [x for x in items if x not in choices]
        if bad:
            raise argparse.ArgumentTypeError(f"unknown value(s): {', '.join(bad)}")
        return items
    return parse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="queuenet", description="Slotted-time queueing network signal control.")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int, help="override the scenario's seed")
    r.add_argument("--controller", choices=CONTROLLERS, help="override the scenario's controller")
    r.add_argument("--out", default=None, help="directory for report files")
    r.add_argument("--trace", action="store_true", help="also write the event log")
    r.add_argument("--burn-in", type=int, default=None, help="slots excluded from statistics")

    c = sub.add_parser("compare", help="compare controllers over seeds and demand tiers")
    c.add_argument("scenario")
    c.add_argument("--controllers", type=_list(CONTROLLERS), default=list(CONTROLLERS))
    c.add_argument("--seeds", type=_seeds, default=[0])
    c.add_argument("--tiers", type=_list(tuple(DEMAND_TIERS)), default=[],
                   help="comma-separated demand tiers (high, medium, low); default uses the scenario demand")
    c.add_argument("--out", default="results")
    c.add_argument("--trace", action="store_true")
    c.add_argument("--burn-in", type=int, default=None)

    v = sub.add_parser("validate", help="parse a scenario and print its canonical form")
    v.add_argument("scenario")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "validate":
            sys.stdout.write(serialize_scenario(load_scenario(args.scenario)))
            return 0
        if args.verb == "run":
            cfg = load_scenario(args.scenario)
            if args.seed is not None:
                cfg = replace(cfg, seed=args.seed)
            if args.controller:
                cfg = replace(cfg, controller=replace(cfg.controller, kind=args.controller))
            if args.burn_in is not None:
                cfg = replace(cfg, burn_in=args.burn_in)
            if args.trace:
                cfg = replace(cfg, trace=True)
            res = run(cfg)
            if args.out:
                write_run(args.out, cfg, res)
            sys.stdout.write(res.report.summary_text())
            stab = stability_estimate(res.report.queue_totals)
            sys.stdout.write(f"bounded={str(stab.bounded).lower()}\n")
            if stab.bounded:
                sys.stdout.write(f"littles_law_error={littles_law_check(res.report, stab)!r}\n")
            return 0
        spec = ExperimentSpec(args.scenario, args.controllers, args.seeds, args.out, args.tiers,
                              args.trace, args.burn_in)
        cells = compare(spec)
        tiers = list(spec.tiers) or ["base"]
        print(format_delay_table(cells, tiers, sorted(spec.controllers)))
        print(f"tables written to {os.path.abspath(spec.out_dir)}")
        return 0
    except (QueueNetError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
