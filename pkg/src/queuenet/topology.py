"""Directed service network: nodes, per-link queues, phases and routing.

One queue exists per directed link ``(i, j)`` and lives at node ``j``.
Phase-level "virtual queues" are views computed from the member links.
Nodes and links are kept in lexicographic order so every tie-break made
downstream is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .errors import ConfigError, DanglingLink, EmptyPhase, RoutingMassExceeded

Link = Tuple[str, str]

# Straight / left / right split used by generated grids.
GRID_TURN_SHARES = (0.6, 0.2, 0.2)
MASS_TOL = 1e-9


@dataclass(frozen=True)
class LinkSpec:
    src: str
    dst: str
    travel: int = 10
    line: Optional[int] = field(default=None, compare=False)


@dataclass(frozen=True)
class PhaseSpec:
    node: str
    name: str
    upstream: Tuple[str, ...]
    line: Optional[int] = field(default=None, compare=False)


@dataclass(frozen=True)
class RouteSpec:
    prev: str
    node: str
    nxt: str
    fraction: float
    line: Optional[int] = field(default=None, compare=False)


@dataclass(frozen=True)
class ClassSpec:
    """Job class with its share of arrivals and processing time in slots."""

    name: str
    share: float = 1.0
    processing: int = 1
    line: Optional[int] = field(default=None, compare=False)


@dataclass
class TopologySpec:
    """Explicit topology section as written in a scenario file."""

    nodes: List[str] = field(default_factory=list)
    sources: List[str] = field(default_factory=list)
    links: List[LinkSpec] = field(default_factory=list)
    phases: List[PhaseSpec] = field(default_factory=list)
    routes: List[RouteSpec] = field(default_factory=list)
    service_rate: int = 1


@dataclass(frozen=True)
class GridSpec:
    """Generator directive for a two-way ``rows x cols`` grid."""

    rows: int
    cols: int
    travel: int = 10
    boundary_sources: bool = True
    service_rate: int = 1
    straight: float = GRID_TURN_SHARES[0]
    turn: float = GRID_TURN_SHARES[1]


class RoutingTable:
    """Routing proportions ``eta[(prev, node)][next]``; exits are the residual."""

    def __init__(self, eta: Mapping[Link, Mapping[str, float]] | None = None):
        self._eta: Dict[Link, Dict[str, float]] = {}
        for key in sorted(eta or {}):
            row = {k: float(v) for k, v in sorted(eta[key].items()) if v > 0}
            if row:
                self._eta[key] = row

    def eta(self, prev: str, node: str, nxt: str) -> float:
        return self._eta.get((prev, node), {}).get(nxt, 0.0)

    def row(self, prev: str, node: str) -> Dict[str, float]:
        return dict(self._eta.get((prev, node), {}))

    def exit_fraction(self, prev: str, node: str) -> float:
        return max(0.0, 1.0 - sum(self._eta.get((prev, node), {}).values()))

    def items(self):
        return self._eta.items()

    def __eq__(self, other):
        return isinstance(other, RoutingTable) and self._eta == other._eta


@dataclass(frozen=True)
class Phase:
    name: str
    links: Tuple[Link, ...]


@dataclass(frozen=True)
class ServiceProfile:
    """Per-link service units per green slot and per-class processing times.

    A job of class ``k`` needs ``processing[k]`` units, so its service rate
    on a link is ``rate / processing[k]`` jobs per slot.
    """

    rate: int = 1
    processing: Tuple[Tuple[str, int], ...] = (("job", 1),)

    def processing_time(self, job_class: str) -> int:
        return dict(self.processing).get(job_class, 1)

    def mu(self, job_class: str) -> float:
        return self.rate / self.processing_time(job_class)


class NetworkGraph:
    """Validated, immutable network.

    ``nodes`` includes source nodes (entry points without queues or
    phases); ``intersections`` are the controlled nodes.
    """

    def __init__(self, nodes: Sequence[str], sources: Sequence[str], links: Sequence[Link],
                 travel: Mapping[Link, int], phases: Mapping[str, Sequence[Phase]],
                 routing: RoutingTable, service: ServiceProfile):
        self.nodes: Tuple[str, ...] = tuple(sorted(nodes))
        self.sources: Tuple[str, ...] = tuple(sorted(sources))
        self.links: Tuple[Link, ...] = tuple(sorted(links))
        self.travel: Dict[Link, int] = dict(travel)
        self.routing = routing
        self.service = service
        self.link_index: Dict[Link, int] = {lk: n for n, lk in enumerate(self.links)}
        ins: Dict[str, List[str]] = {v: [] for v in self.nodes}
        outs: Dict[str, List[str]] = {v: [] for v in self.nodes}
        for u, v in self.links:
            outs[u].append(v)
            ins[v].append(u)
        self.in_neighbors: Dict[str, Tuple[str, ...]] = {v: tuple(sorted(x)) for v, x in ins.items()}
        self.out_neighbors: Dict[str, Tuple[str, ...]] = {v: tuple(sorted(x)) for v, x in outs.items()}
        self.phases: Dict[str, Tuple[Phase, ...]] = {v: tuple(phases.get(v, ())) for v in self.nodes}
        src = set(self.sources)
        self.intersections: Tuple[str, ...] = tuple(v for v in self.nodes if v not in src)
        self.entry_links: Tuple[Link, ...] = tuple(lk for lk in self.links if lk[0] in src)
        self._incoming = {v: tuple((u, v) for u in self.in_neighbors[v]) for v in self.nodes}
        self._outgoing = {v: tuple((v, u) for u in self.out_neighbors[v]) for v in self.nodes}
        self.intersection_set = frozenset(self.intersections)
        # intersections adjacent to each node, either direction, sorted
        self.agent_neighbors = {v: tuple(sorted((set(self.in_neighbors[v]) | set(self.out_neighbors[v]))
                                                & self.intersection_set)) for v in self.nodes}

    @property
    def L(self) -> int:
        return len(self.nodes)

    @property
    def N(self) -> int:
        return len(self.links)

    def incoming(self, node: str) -> Tuple[Link, ...]:
        return self._incoming[node]

    def outgoing(self, node: str) -> Tuple[Link, ...]:
        return self._outgoing[node]

    def internal_links(self) -> Tuple[Link, ...]:
        src = set(self.sources)
        return tuple(lk for lk in self.links if lk[0] not in src and lk[1] not in src)

    def activation_vectors(self, node: str) -> List[Tuple[int, ...]]:
        """0/1 activation vectors of ``node``'s phases over its incoming links."""
        inc = self.incoming(node)
        return [tuple(int(lk in ph.links) for lk in inc) for ph in self.phases[node]]

    def feasible_set(self) -> List[Tuple[int, ...]]:
        """Per-node phases lifted to {0,1}^N vectors (one entry per phase)."""
        out = []
        for node in self.intersections:
            for ph in self.phases[node]:
                vec = [0] * self.N
                for lk in ph.links:
                    vec[self.link_index[lk]] = 1
                out.append(tuple(vec))
        return out


def build_network(spec: TopologySpec | GridSpec) -> NetworkGraph:
    """Validate a topology section and return the network it describes."""
    if isinstance(spec, GridSpec):
        spec = grid_network(spec.rows, spec.cols, spec.boundary_sources, travel=spec.travel,
                            service_rate=spec.service_rate, straight=spec.straight, turn=spec.turn)
    declared = set(spec.nodes) | set(spec.sources)
    if len(declared) != len(spec.nodes) + len(spec.sources):
        raise ConfigError("duplicate node id")
    if spec.service_rate < 1:
        raise ConfigError("service rate must be >= 1 unit per slot")

    links: List[Link] = []
    travel: Dict[Link, int] = {}
    for ls in spec.links:
        for end in (ls.src, ls.dst):
            if end not in declared:
                raise DanglingLink(f"link {ls.src}->{ls.dst}: unknown node {end!r}", ls.line)
        lk = (ls.src, ls.dst)
        if lk in travel:
            raise ConfigError(f"duplicate link {ls.src}->{ls.dst}", ls.line)
        if ls.dst in spec.sources:
            raise ConfigError(f"link {ls.src}->{ls.dst} enters a source node", ls.line)
        if ls.travel < 0:
            raise ConfigError(f"link {ls.src}->{ls.dst}: negative travel time", ls.line)
        links.append(lk)
        travel[lk] = ls.travel
    linkset = set(links)

    phases: Dict[str, List[Phase]] = {}
    for ps in spec.phases:
        if ps.node not in spec.nodes:
            raise DanglingLink(f"phase {ps.name} at unknown node {ps.node!r}", ps.line)
        if not ps.upstream:
            raise EmptyPhase(f"phase {ps.name} at {ps.node} activates no link", ps.line)
        members = []
        for u in ps.upstream:
            if (u, ps.node) not in linkset:
                raise DanglingLink(f"phase {ps.name} at {ps.node}: no link {u}->{ps.node}", ps.line)
            members.append((u, ps.node))
        phases.setdefault(ps.node, []).append(Phase(ps.name, tuple(sorted(members))))
    for node in sorted(spec.nodes):
        inc = sorted(lk for lk in links if lk[1] == node)
        if node not in phases:
            # no phases declared: serve each incoming link on its own
            phases[node] = [Phase(lk[0], (lk,)) for lk in inc]
            continue
        covered = {lk for ph in phases[node] for lk in ph.links}
        missing = [lk for lk in inc if lk not in covered]
        if missing:
            raise EmptyPhase(f"node {node}: link {missing[0][0]}->{node} is in no phase")
        vecs = [frozenset(ph.links) for ph in phases[node]]
        if len(set(vecs)) != len(vecs):
            raise ConfigError(f"node {node}: two phases have the same activation set")

    eta: Dict[Link, Dict[str, float]] = {}
    row_line: Dict[Link, Optional[int]] = {}
    for rs in spec.routes:
        if not 0.0 <= rs.fraction <= 1.0:
            raise ConfigError(f"routing fraction {rs.fraction} outside [0, 1]", rs.line)
        if rs.fraction > 0:
            for lk in ((rs.prev, rs.node), (rs.node, rs.nxt)):
                if lk not in linkset:
                    raise DanglingLink(f"routing {rs.prev}->{rs.node}->{rs.nxt}: no link {lk[0]}->{lk[1]}",
                                       rs.line)
        row = eta.setdefault((rs.prev, rs.node), {})
        if rs.nxt in row:
            raise ConfigError(f"duplicate routing entry {rs.prev}->{rs.node}->{rs.nxt}", rs.line)
        row[rs.nxt] = rs.fraction
        row_line[(rs.prev, rs.node)] = rs.line
        if sum(row.values()) > 1.0 + MASS_TOL:
            raise RoutingMassExceeded(
                f"routing from {rs.prev} through {rs.node} sums to {sum(row.values()):.6g} > 1", rs.line)

    return NetworkGraph(spec.nodes + spec.sources, spec.sources, links, travel, phases,
                        RoutingTable(eta), ServiceProfile(rate=spec.service_rate))


def grid_node(r: int, c: int) -> str:
    return f"r{r}c{c}"


_SIDES = {"N": (-1, 0), "S": (1, 0), "W": (0, -1), "E": (0, 1)}


def grid_network(rows: int, cols: int, boundary_sources: bool = True, *, travel: int = 10,
                 service_rate: int = 1, straight: float = GRID_TURN_SHARES[0],
                 turn: float = GRID_TURN_SHARES[1]) -> TopologySpec:
    """Two-way grid with NS/EW phases and straight-biased routing.

    Movements that would leave the grid become exits, so jobs only leave
    the network at boundary intersections.
    """
    if rows < 1 or cols < 1:
        raise ConfigError("grid needs rows, cols >= 1")
    pos: Dict[str, Tuple[int, int]] = {}
    nodes = []
    for r in range(rows):
        for c in range(cols):
            nodes.append(grid_node(r, c))
            pos[grid_node(r, c)] = (r, c)
    at = {p: n for n, p in pos.items()}
    links: List[LinkSpec] = []
    for n, (r, c) in pos.items():
        for dr, dc in _SIDES.values():
            m = at.get((r + dr, c + dc))
            if m is not None:
                links.append(LinkSpec(n, m, travel))
    sources = []
    if boundary_sources:
        for n, (r, c) in list(pos.items()):
            for side, (dr, dc) in _SIDES.items():
                if (r + dr, c + dc) not in at:
                    s = f"in{side}_{n}"
                    sources.append(s)
                    pos[s] = (r + dr, c + dc)
                    links.append(LinkSpec(s, n, travel))

    links.sort(key=lambda ls: (ls.src, ls.dst))
    upstream: Dict[str, List[str]] = {n: [] for n in nodes}
    for ls in links:
        upstream[ls.dst].append(ls.src)

    phases: List[PhaseSpec] = []
    routes: List[RouteSpec] = []
    for n in nodes:
        r, c = pos[n]
        ns = tuple(sorted(u for u in upstream[n] if pos[u][1] == c))
        ew = tuple(sorted(u for u in upstream[n] if pos[u][0] == r))
        if ns:
            phases.append(PhaseSpec(n, "NS", ns))
        if ew:
            phases.append(PhaseSpec(n, "EW", ew))
        for h in sorted(upstream[n]):
            dr, dc = r - pos[h][0], c - pos[h][1]
            moves = (((dr, dc), straight), ((-dc, dr), turn), ((dc, -dr), turn))
            for (mr, mc), share in moves:
                dest = at.get((r + mr, c + mc))
                if dest is not None and share > 0:
                    routes.append(RouteSpec(h, n, dest, share))
    return TopologySpec(nodes=nodes, sources=sorted(sources), links=links, phases=phases,
                        routes=routes, service_rate=service_rate)

