"""Controller comparisons over seeds and demand tiers, written out as CSV tables."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .engine import CONTROLLERS, ScenarioConfig, events_csv, run, weights_csv
from .errors import ConfigError
from .metrics import MetricsReport, pooled
from .scenario import load_scenario, serialize_scenario
from .traffic import DEMAND_TIERS

BASE_TIER = "base"
QUEUE_TABLE_THRESHOLD = 2.0


@dataclass
class ExperimentSpec:
    scenario: str
    controllers: Sequence[str] = CONTROLLERS
    seeds: Sequence[int] = (0,)
    out_dir: str = "results"
    tiers: Sequence[str] = ()
    trace: bool = False
    burn_in: Optional[int] = None

    def validate(self) -> None:
        if not self.controllers:
            raise ConfigError("compare needs at least one controller")
        if not self.seeds:
            raise ConfigError("compare needs at least one seed")
        for c in self.controllers:
            if c not in CONTROLLERS:
                raise ConfigError(f"unknown controller {c!r}")
        for t in self.tiers:
            if t not in DEMAND_TIERS:
                raise ConfigError(f"unknown demand tier {t!r}")


@dataclass
class CellResult:
    controller: str
    tier: str
    seeds: Tuple[int, ...]
    reports: List[MetricsReport]
    summary: Dict[str, Optional[float]] = field(default_factory=dict)


def configure(base: ScenarioConfig, controller: str, tier: str, seed: int,
              burn_in: Optional[int] = None, trace: bool = False) -> ScenarioConfig:
    demand = base.demand if tier == BASE_TIER else base.demand.with_tier(tier, base.horizon)
    return replace(base, demand=demand, controller=replace(base.controller, kind=controller), seed=seed,
                   burn_in=base.burn_in if burn_in is None else burn_in, trace=trace)


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def write_run(out_dir: str, cfg: ScenarioConfig, result) -> None:
    rep = result.report
    _write(os.path.join(out_dir, "summary.txt"), rep.summary_text())
    _write(os.path.join(out_dir, "delays.csv"), rep.delays_csv())
    _write(os.path.join(out_dir, "queues.csv"), rep.queues_csv())
    _write(os.path.join(out_dir, "links.csv"), rep.links_csv())
    _write(os.path.join(out_dir, "cdf.csv"), rep.cdf_csv())
    _write(os.path.join(out_dir, "scenario.txt"), serialize_scenario(cfg))
    if cfg.trace:
        _write(os.path.join(out_dir, "events.csv"), events_csv(result.events))
        if cfg.controller.kind == "sp":
            _write(os.path.join(out_dir, "weights.csv"), weights_csv(result.simulation.weight_trace))


def compare(spec: ExperimentSpec, base: Optional[ScenarioConfig] = None) -> Dict[Tuple[str, str], CellResult]:
    """Run every (tier, controller, seed) combination and write the comparison tables."""
    spec.validate()
    base = base or load_scenario(spec.scenario)
    tiers = list(spec.tiers) or [BASE_TIER]
    seeds = tuple(sorted(spec.seeds))
    cells: Dict[Tuple[str, str], CellResult] = {}
    for tier in tiers:
        for ctl in sorted(spec.controllers):
            reports = []
            for seed in seeds:
                cfg = configure(base, ctl, tier, seed, spec.burn_in, spec.trace)
                res = run(cfg)
                write_run(os.path.join(spec.out_dir, "runs", f"{tier}_{ctl}_seed{seed}"), cfg, res)
                reports.append(res.report)
            cells[(tier, ctl)] = CellResult(ctl, tier, seeds, reports, pooled(reports))
    write_tables(spec.out_dir, cells, tiers, sorted(spec.controllers))
    return cells


def delay_table(cells, tiers: Sequence[str], controllers: Sequence[str]) -> str:
    head = ["tier"] + [f"{c}_{k}" for c in controllers for k in ("mean", "std")]
    rows = [",".join(head)]
    for tier in tiers:
        vals = [tier]
        for c in controllers:
            s = cells[(tier, c)].summary
            vals += ["" if s["mean"] is None else repr(s["mean"]), "" if s["std"] is None else repr(s["std"])]
        rows.append(",".join(vals))
    return "\n".join(rows) + "\n"


def link_means(cell: CellResult) -> Dict[Tuple[str, str], float]:
    """Per-link time-averaged queue, averaged over the cell's runs."""
    acc: Dict[Tuple[str, str], List[float]] = {}
    for rep in cell.reports:
        for lk, m in zip(rep.links, rep.link_queue_mean.tolist()):
            acc.setdefault(lk, []).append(m)
    return {lk: float(np.mean(v)) for lk, v in acc.items()}


def queue_table(cells, tier: str, controllers: Sequence[str], threshold: float = QUEUE_TABLE_THRESHOLD,
                reference: Optional[str] = None) -> str:
    """Links whose average queue under ``reference`` exceeds ``threshold``.

    The reference defaults to sdc when it was run, else to the first controller.
    """
    reference = reference or ("sdc" if "sdc" in controllers else controllers[0])
    means = {c: link_means(cells[(tier, c)]) for c in controllers}
    rows = [",".join(["from", "to"] + [f"{c}_mean_queue" for c in controllers])]
    for lk in sorted(means[reference]):
        if means[reference][lk] > threshold:
            rows.append(",".join([lk[0], lk[1]] + [repr(means[c][lk]) for c in controllers]))
    return "\n".join(rows) + "\n"


def pooled_cdf(cell: CellResult) -> str:
    delays = np.concatenate([r.delays for r in cell.reports]) if cell.reports else np.zeros(0)
    lines = ["delay,fraction"]
    if delays.size:
        vals, counts = np.unique(delays, return_counts=True)
        frac = np.cumsum(counts) / delays.size
        lines += [f"{v},{f!r}" for v, f in zip(vals.tolist(), frac.tolist())]
    return "\n".join(lines) + "\n"


def write_tables(out_dir: str, cells, tiers: Sequence[str], controllers: Sequence[str]) -> None:
    _write(os.path.join(out_dir, "delay_table.csv"), delay_table(cells, tiers, controllers))
    for tier in tiers:
        _write(os.path.join(out_dir, f"queue_table_{tier}.csv"), queue_table(cells, tier, controllers))
        for c in controllers:
            _write(os.path.join(out_dir, f"cdf_{tier}_{c}.csv"), pooled_cdf(cells[(tier, c)]))


def format_delay_table(cells, tiers: Sequence[str], controllers: Sequence[str]) -> str:
    """Aligned text version of the mean/std delay table for terminals."""
    width = 18
    out = ["tier".ljust(10) + "".join(c.rjust(width) for c in controllers)]
    for tier in tiers:
        row = tier.ljust(10)
        for c in controllers:
            s = cells[(tier, c)].summary
            cell = "n/a" if s["mean"] is None else f"{s['mean']:.2f} ({s['std']:.2f})"
            row += cell.rjust(width)
        out.append(row)
    return "\n".join(out)
