"""Plain-text scenario files.

Grammar (``#`` starts a comment; blank lines are ignored)::

    [topology]
    grid rows=4 cols=4 travel=10 service_rate=1 straight=0.6 turn=0.2 boundary_sources=true
    # ...or an explicit network:
    node X
    source a
    link a X travel=10
    service_rate 1

    [phases]                 # explicit networks only
    phase X NS a,b           # node, phase name, comma-separated upstream nodes

    [routing]                # explicit networks only
    route a X Y 0.5          # previous node, node, next node, fraction

    [demand]
    scale 1.0
    class job share=1 processing=1
    segment * 0 1800 236     # '*' spreads a network-wide jobs/hour rate over entry links
    segment a->X 0 1800 100  # or one entry link

    [controller]
    kind sdc                 # sdc | bp | sp
    changeover 5
    min_green 5
    max_green 55
    horizon 120
    gap 3
    extension 2
    temperature 1.0
    coordinated true
    replan_every 1
    outflows true            # sdc/sp: forward predicted departures downstream

    [run]
    horizon 3600
    seed 0
    burn_in 0
    trace false

Times are integer slots and rates are jobs per hour. ``serialize`` writes
every value explicitly, so ``parse(serialize(parse(text)))`` equals
``parse(text)``.
"""

from __future__ import annotations

from dataclasses import fields
from typing import Dict, List, Optional, Tuple

from .engine import ControllerConfig, ScenarioConfig
from .errors import ConfigError
from .topology import (GRID_TURN_SHARES, ClassSpec, GridSpec, LinkSpec, PhaseSpec, RouteSpec,
                       TopologySpec, build_network)
from .traffic import DemandEntry, DemandSpec

SECTIONS = ("topology", "phases", "routing", "demand", "controller", "run")


def _int(tok: str, line: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ConfigError(f"{what} must be an integer, got {tok!r}", line) from None


def _float(tok: str, line: int, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ConfigError(f"{what} must be a number, got {tok!r}", line) from None


def _bool(tok: str, line: int, what: str) -> bool:
    low = tok.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{what} must be true or false, got {tok!r}", line)


def _options(tokens: List[str], line: int, allowed: Tuple[str, ...]) -> Dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ConfigError(f"expected key=value, got {tok!r}", line)
        k, v = tok.split("=", 1)
        if k not in allowed:
            raise ConfigError(f"unknown option {k!r}", line)
        out[k] = v
    return out


def _link(tok: str, line: int) -> Tuple[str, str]:
    if "->" not in tok:
        raise ConfigError(f"expected a link written as from->to, got {tok!r}", line)
    u, v = tok.split("->", 1)
    return u, v


_CONTROLLER_TYPES = {f.name: f.type for f in fields(ControllerConfig)}


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse and fully validate a scenario; errors carry the offending line number."""
    section: Optional[str] = None
    seen = set()
    grid: Optional[GridSpec] = None
    grid_line = None
    nodes: List[str] = []
    sources: List[str] = []
    links: List[LinkSpec] = []
    phases: List[PhaseSpec] = []
    routes: List[RouteSpec] = []
    service_rate = 1
    entries: List[DemandEntry] = []
    classes: List[ClassSpec] = []
    scale = 1.0
    ctl: Dict[str, object] = {}
    ctl_line: Dict[str, int] = {}
    run_opts = {"horizon": 3600, "seed": 0, "burn_in": 0, "trace": False}

    for n, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("["):
            if not body.endswith("]") or body[1:-1].strip() not in SECTIONS:
                raise ConfigError(f"unknown section {body!r}", n)
            section = body[1:-1].strip()
            if section in seen:
                raise ConfigError(f"section [{section}] appears twice", n)
            seen.add(section)
            continue
        if section is None:
            raise ConfigError("content before the first [section]", n)
        tok = body.split()
        key, args = tok[0], tok[1:]

        if section == "topology":
            if key == "grid":
                o = _options(args, n, ("rows", "cols", "travel", "service_rate", "straight", "turn",
                                       "boundary_sources"))
                if "rows" not in o or "cols" not in o:
                    raise ConfigError("grid needs rows= and cols=", n)
                grid = GridSpec(_int(o["rows"], n, "rows"), _int(o["cols"], n, "cols"),
                                _int(o.get("travel", "10"), n, "travel"),
                                _bool(o.get("boundary_sources", "true"), n, "boundary_sources"),
                                _int(o.get("service_rate", "1"), n, "service_rate"),
                                _float(o.get("straight", repr(GRID_TURN_SHARES[0])), n, "straight"),
                                _float(o.get("turn", repr(GRID_TURN_SHARES[1])), n, "turn"))
                if grid.rows < 1 or grid.cols < 1:
                    raise ConfigError("grid needs rows, cols >= 1", n)
                if grid.straight < 0 or grid.turn < 0 or grid.straight + 2 * grid.turn > 1 + 1e-9:
                    raise ConfigError("grid turn shares must be >= 0 and sum to at most 1", n)
                grid_line = n
            elif key in ("node", "source"):
                if len(args) != 1:
                    raise ConfigError(f"{key} takes exactly one id", n)
                (nodes if key == "node" else sources).append(args[0])
            elif key == "link":
                if len(args) < 2:
                    raise ConfigError("link needs a source and a destination", n)
                o = _options(args[2:], n, ("travel",))
                links.append(LinkSpec(args[0], args[1], _int(o.get("travel", "10"), n, "travel"), n))
            elif key == "service_rate":
                if len(args) != 1:
                    raise ConfigError("service_rate takes one value", n)
                service_rate = _int(args[0], n, "service_rate")
            else:
                raise ConfigError(f"unknown topology record {key!r}", n)
        elif section == "phases":
            if key != "phase" or len(args) != 3:
                raise ConfigError("expected: phase NODE NAME UPSTREAM[,UPSTREAM...]", n)
            ups = tuple(u for u in args[2].split(",") if u)
            phases.append(PhaseSpec(args[0], args[1], ups, n))
        elif section == "routing":
            if key != "route" or len(args) != 4:
                raise ConfigError("expected: route PREV NODE NEXT FRACTION", n)
            routes.append(RouteSpec(args[0], args[1], args[2], _float(args[3], n, "fraction"), n))
        elif section == "demand":
            if key == "scale":
                if len(args) != 1:
                    raise ConfigError("scale takes one value", n)
                scale = _float(args[0], n, "scale")
                if scale < 0:
                    raise ConfigError("scale must be >= 0", n)
            elif key == "class":
                if not args:
                    raise ConfigError("class needs a name", n)
                o = _options(args[1:], n, ("share", "processing"))
                cs = ClassSpec(args[0], _float(o.get("share", "1"), n, "share"),
                               _int(o.get("processing", "1"), n, "processing"), n)
                if cs.processing < 1:
                    raise ConfigError("processing time must be >= 1 slot", n)
                classes.append(cs)
            elif key == "segment":
                if len(args) != 4:
                    raise ConfigError("expected: segment LINK|* START END RATE", n)
                target = None if args[0] == "*" else _link(args[0], n)
                e = DemandEntry(target, _int(args[1], n, "start"), _int(args[2], n, "end"),
                                _float(args[3], n, "rate"), n)
                if e.end <= e.start or e.rate < 0:
                    raise ConfigError(f"bad demand segment [{e.start}, {e.end}) rate {e.rate}", n)
                entries.append(e)
            else:
                raise ConfigError(f"unknown demand record {key!r}", n)
        elif section == "controller":
            if key not in _CONTROLLER_TYPES or len(args) != 1:
                raise ConfigError(f"unknown controller setting {key!r}" if key not in _CONTROLLER_TYPES
                                  else f"{key} takes one value", n)
            typ = _CONTROLLER_TYPES[key]
            if key == "kind":
                ctl[key] = args[0]
            elif typ in ("bool", bool):
                ctl[key] = _bool(args[0], n, key)
            elif typ in ("float", float):
                ctl[key] = _float(args[0], n, key)
            else:
                ctl[key] = _int(args[0], n, key)
            ctl_line[key] = n
        elif section == "run":
            if key not in run_opts or len(args) != 1:
                raise ConfigError(f"unknown run setting {key!r}" if key not in run_opts
                                  else f"{key} takes one value", n)
            run_opts[key] = _bool(args[0], n, key) if key == "trace" else _int(args[0], n, key)

    if grid is not None:
        if nodes or sources or links or phases or routes:
            raise ConfigError("a grid topology cannot be combined with explicit nodes, links, "
                              "phases or routes", grid_line)
        topology = grid
    else:
        if not nodes:
            raise ConfigError("topology declares no nodes")
        topology = TopologySpec(nodes, sources, links, phases, routes, service_rate)
    graph = build_network(topology)

    controller = ControllerConfig(**ctl)
    try:
        controller.validate()
    except ConfigError as e:
        line = max(ctl_line.values()) if ctl_line else None
        for k in ctl_line:
            if k in e.message:
                line = ctl_line[k]
                break
        raise ConfigError(e.message, line) from None

    demand = DemandSpec(entries, tuple(classes) if classes else DemandSpec().classes, scale)
    demand.profile(graph.entry_links)  # validates link targets and contiguity
    cfg = ScenarioConfig(topology, demand, controller, run_opts["horizon"], run_opts["seed"],
                         run_opts["burn_in"], run_opts["trace"])
    cfg.validate()
    return cfg


def _num(x: float) -> str:
    return repr(float(x))


def serialize_scenario(cfg: ScenarioConfig) -> str:
    """Canonical text of ``cfg`` with every default written out."""
    out = ["[topology]"]
    topo = cfg.topology
    if isinstance(topo, GridSpec):
        out.append(f"grid rows={topo.rows} cols={topo.cols} travel={topo.travel} "
                   f"service_rate={topo.service_rate} straight={_num(topo.straight)} "
                   f"turn={_num(topo.turn)} boundary_sources={str(topo.boundary_sources).lower()}")
    else:
        out += [f"node {v}" for v in topo.nodes]
        out += [f"source {v}" for v in topo.sources]
        out += [f"link {ls.src} {ls.dst} travel={ls.travel}" for ls in topo.links]
        out.append(f"service_rate {topo.service_rate}")
        if topo.phases:
            out += ["", "[phases]"]
            out += [f"phase {p.node} {p.name} {','.join(p.upstream)}" for p in topo.phases]
        if topo.routes:
            out += ["", "[routing]"]
            out += [f"route {r.prev} {r.node} {r.nxt} {_num(r.fraction)}" for r in topo.routes]
    d = cfg.demand
    out += ["", "[demand]", f"scale {_num(d.scale)}"]
    out += [f"class {c.name} share={_num(c.share)} processing={c.processing}" for c in d.classes]
    for e in d.entries:
        target = "*" if e.link is None else f"{e.link[0]}->{e.link[1]}"
        out.append(f"segment {target} {e.start} {e.end} {_num(e.rate)}")
    c = cfg.controller
    out += ["", "[controller]"]
    for f in fields(ControllerConfig):
        v = getattr(c, f.name)
        if isinstance(v, bool):
            v = str(v).lower()
        elif isinstance(v, float):
            v = _num(v)
        out.append(f"{f.name} {v}")
    out += ["", "[run]", f"horizon {cfg.horizon}", f"seed {cfg.seed}", f"burn_in {cfg.burn_in}",
            f"trace {str(cfg.trace).lower()}"]
    return "\n".join(out) + "\n"


def load_scenario(path: str) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())
