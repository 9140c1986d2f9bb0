"""Slotted-time simulation loop.

Within a slot the engine (1) injects new jobs on entry links, (2) lands
in-flight jobs whose travel time has elapsed, (3) lets every intersection's
controller pick its phase, (4) serves up to ``rate`` units on each link of
the green phase, (5) forwards finished jobs to their next link or out of the
network and (6) samples metrics. Queue samples are taken at the end of the
slot, so a job landing at ``a`` and leaving service at ``d`` is counted in
``d - a`` samples.
"""

from __future__ import annotations

import gc
from collections import deque

import numpy as np
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .bp import BpState, Switch, bp_signal_step
from .errors import ConfigError
from .metrics import MetricsReport, pooled, summarize
from .sdc import (DEFAULT_CHANGEOVER, DEFAULT_HORIZON, DEFAULT_MAX_GREEN, DEFAULT_MIN_GREEN,
                  SchedulingInstance, enforce_max_green)
from .sp import Mailbox, sp_round
from .topology import GridSpec, Link, NetworkGraph, TopologySpec, build_network
from .traffic import ROUTE_DRAWS, ArrivalStream, DemandSpec, Job, build_phase_clusters

CONTROLLERS = ("sdc", "bp", "sp")


@dataclass
class ControllerConfig:
    kind: str = "sdc"
    changeover: int = DEFAULT_CHANGEOVER
    min_green: int = DEFAULT_MIN_GREEN
    max_green: int = DEFAULT_MAX_GREEN
    horizon: int = DEFAULT_HORIZON
    gap: int = 3
    extension: int = 2
    temperature: float = 1.0
    coordinated: bool = True
    replan_every: int = 1
    outflows: bool = True  # sdc/sp: forward predicted departures to downstream planners

    def validate(self, line: Optional[int] = None) -> None:
        if self.kind not in CONTROLLERS:
            raise ConfigError(f"controller must be one of {', '.join(CONTROLLERS)}, got {self.kind!r}", line)
        if self.changeover < 0:
            raise ConfigError("changeover must be >= 0", line)
        if self.min_green < 1:
            raise ConfigError("min_green must be >= 1", line)
        if self.max_green < self.min_green:
            raise ConfigError("max_green must be >= min_green", line)
        if self.horizon < 1 or self.gap < 0 or self.extension < 1 or self.replan_every < 1:
            raise ConfigError("horizon, extension and replan_every must be >= 1; gap >= 0", line)
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0", line)


@dataclass
class ScenarioConfig:
    topology: TopologySpec | GridSpec
    demand: DemandSpec = field(default_factory=DemandSpec)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    horizon: int = 3600
    seed: int = 0
    burn_in: int = 0
    trace: bool = False

    def validate(self) -> None:
        if self.horizon < 0:
            raise ConfigError("run horizon must be >= 0")
        if not 0 <= self.burn_in <= self.horizon:
            raise ConfigError("burn_in must lie within the run horizon")
        self.controller.validate()

    def metadata(self) -> Dict[str, str]:
        c = self.controller
        return {
            "controller": c.kind, "changeover": str(c.changeover), "min_green": str(c.min_green),
            "max_green": str(c.max_green), "plan_horizon": str(c.horizon), "gap": str(c.gap),
            "extension": str(c.extension), "temperature": repr(float(c.temperature)),
            "coordinated": str(c.coordinated).lower(), "replan_every": str(c.replan_every),
            "outflows": str(c.outflows).lower(),
            "slots": str(self.horizon), "seed": str(self.seed), "burn_in": str(self.burn_in),
            "demand_scale": repr(float(self.demand.scale)),
            "topology": self._topology_text(),
            "demand": ";".join(f"{'*' if e.link is None else e.link[0] + '->' + e.link[1]}"
                               f"@{e.start}-{e.end}:{float(e.rate)!r}" for e in self.demand.entries),
            "classes": ";".join(f"{k.name}:{float(k.share)!r}:{k.processing}" for k in self.demand.classes),
        }

    def _topology_text(self) -> str:
        t = self.topology
        if hasattr(t, "rows"):
            return (f"grid {t.rows}x{t.cols} travel={t.travel} service_rate={t.service_rate} "
                    f"straight={float(t.straight)!r} turn={float(t.turn)!r} "
                    f"boundary_sources={str(t.boundary_sources).lower()}")
        return (f"nodes={len(t.nodes)} sources={len(t.sources)} links={len(t.links)} "
                f"service_rate={t.service_rate}")


class NodeState:
    __slots__ = ("phase", "co_left", "elapsed", "call_since", "bp", "weights")

    def __init__(self):
        self.phase = 0
        self.co_left = 0      # changeover slots still to run (0 means green)
        self.elapsed = 0      # green slots of the current phase so far
        self.call_since = None  # first slot another phase had queued jobs during this green
        self.bp = BpState()
        self.weights = None


@dataclass
class SimState:
    t: int
    queues: Dict[Link, deque]
    inflight: Dict[Link, deque]
    nodes: Dict[str, NodeState]
    events: List[Tuple[int, str, str, int]]
    injected: int = 0
    exited: int = 0


def _link_name(lk: Link) -> str:
    return f"{lk[0]}->{lk[1]}"


class Simulation:
    """One deterministic run of a scenario."""

    def __init__(self, config: ScenarioConfig, check: bool = False):
        config.validate()
        self.config = config
        self.ctl = config.controller
        self.check = check
        self.tracing = config.trace
        self.graph: NetworkGraph = build_network(config.topology)
        g = self.graph
        self.profile = config.demand.profile(g.entry_links)
        self.units = {c.name: c.processing for c in self.profile.classes}
        self.stream = ArrivalStream(self.profile, config.seed, self.units)
        self.rate = g.service.rate
        self.travel = dict(g.travel)
        self.served_links = list(g.links)
        self.link_pos = {lk: n for n, lk in enumerate(self.served_links)}
        self.route_cum: Dict[Link, List[Tuple[float, str]]] = {}
        for lk in g.links:
            acc, rows = 0.0, []
            for nxt, frac in sorted(g.routing.row(lk[0], lk[1]).items()):
                acc += frac
                rows.append((acc, nxt))
            self.route_cum[lk] = rows
        self.state = SimState(0, {lk: deque() for lk in self.served_links},
                              {lk: deque() for lk in g.links},
                              {n: NodeState() for n in g.intersections}, [])
        self.mailbox = Mailbox()
        self.phase_links = {n: [ph.links for ph in g.phases[n]] for n in g.intersections}
        self.activations = {n: g.activation_vectors(n) for n in g.intersections}
        self.incoming = {n: g.incoming(n) for n in g.intersections}
        # accumulators
        self.qlen = [0] * len(self.served_links)
        self.last_change = [0] * len(self.served_links)
        self.link_sum = [0] * len(self.served_links)
        self.link_sumsq = [0] * len(self.served_links)
        self.total_q = 0
        self.lyap = 0
        self.totals: List[int] = []
        self.lyap_trace: List[int] = []
        self.delays: List[int] = []
        self.queue_times: List[int] = []
        self.in_flight_count = 0
        self.land_at: Dict[int, List[Link]] = {}
        self._decisions: Dict[tuple, Optional[int]] = {}
        self._weights: Dict[tuple, tuple] = {}
        self.weight_trace: List[Tuple[int, str, str, int, float, float]] = []
        self._manual_id = -1
        # predicted departures of queued jobs, per node, from its latest plan;
        # new forecasts become visible to neighbors in the next slot
        self.forecast: Dict[str, List[Tuple[Job, int]]] = {}
        self._fresh_forecast: Dict[str, List[Tuple[Job, int]]] = {}
        self.use_outflows = self.ctl.outflows and self.ctl.kind != "bp"
        # only nodes with a downstream intersection have anyone to tell
        self.forecasters = frozenset(n for n in g.intersections
                                     if any(k in g.intersection_set for k in g.out_neighbors[n]))
        self.listeners = frozenset(n for n in g.intersections
                                   if any(k in g.intersection_set for k in g.in_neighbors[n]))

    # queue bookkeeping -------------------------------------------------
    def _change(self, lk: Link, delta: int) -> None:
        i = self.link_pos[lk]
        t = self.state.t
        if t > self.last_change[i]:
            span = t - self.last_change[i]
            q = self.qlen[i]
            self.link_sum[i] += q * span
            self.link_sumsq[i] += q * q * span
            self.last_change[i] = t
        q = self.qlen[i]
        self.lyap += 2 * q * delta + 1
        self.qlen[i] = q + delta
        self.total_q += delta

    def _reset_link_stats(self, t: int) -> None:
        n = len(self.served_links)
        self.last_change = [t] * n
        self.link_sum = [0] * n
        self.link_sumsq = [0] * n

    def _log(self, kind: str, where: str, job_id: int = -1) -> None:
        if self.tracing:
            self.state.events.append((self.state.t, kind, where, job_id))

    # slot phases -------------------------------------------------------
    def _depart_onto(self, job, lk: Link, t: int) -> None:
        job.link = lk
        job.land_slot = t + self.travel[lk]
        self.state.inflight[lk].append(job)
        # a job put on a zero-travel link after this slot's landings lands next slot
        self.land_at.setdefault(max(job.land_slot, t + 1), []).append(lk)
        self.in_flight_count += 1

    def inject(self, link: Link, job_class: Optional[str] = None) -> Job:
        """Put one extra job on entry ``link`` at the current slot (ids count down from -1)."""
        cls = job_class or self.profile.classes[0].name
        draws = np.random.default_rng([self.config.seed, 0xA11, -self._manual_id]).random(ROUTE_DRAWS)
        job = Job(self._manual_id, cls, self.state.t, link, self.units.get(cls, 1), draws.tolist())
        self._manual_id -= 1
        t = self.state.t
        self.land_at.setdefault(t + self.travel[link], []).append(link)
        job.land_slot = t + self.travel[link]
        self.state.inflight[link].append(job)
        self.state.injected += 1
        self.in_flight_count += 1
        return job

    def _inject(self) -> None:
        st = self.state
        t = st.t
        for job in self.stream.jobs_at(t):
            self.land_at.setdefault(t + self.travel[job.link], []).append(job.link)
            job.land_slot = t + self.travel[job.link]
            st.inflight[job.link].append(job)
            st.injected += 1
            self.in_flight_count += 1
            if self.tracing:
                self._log("inject", _link_name(job.link), job.id)

    def _land(self) -> None:
        st = self.state
        t = st.t
        seed = self.config.seed
        for lk in self.land_at.pop(t, ()):
            job = st.inflight[lk].popleft()
            self.in_flight_count -= 1
            job.visits.append([lk[1], t, None])
            u = job.next_draw(seed)
            job.next_hop = None
            for cum, nxt in self.route_cum[lk]:
                if u < cum:
                    job.next_hop = nxt
                    break
            if self.tracing:
                self._log("land", _link_name(lk), job.id)
            st.queues[lk].append(job)
            self._change(lk, +1)

    def _switch(self, node: str, ns: NodeState, phase: int) -> None:
        ns.phase = phase
        ns.co_left = self.ctl.changeover
        ns.elapsed = 0
        ns.call_since = None
        ns.bp.phase = phase
        self._log("switch", node, phase)

    def _other_phase_waiting(self, node: str, ns: NodeState) -> bool:
        q = self.state.queues
        for p, links in enumerate(self.phase_links[node]):
            if p != ns.phase and any(q[lk] for lk in links):
                return True
        return False

    def _control(self) -> None:
        st = self.state
        t = st.t
        kind = self.ctl.kind
        if kind == "sp":
            for node in self.graph.intersections:
                local = {lk: len(st.queues[lk]) for lk in self.incoming[node]}
                wv, pw, eff, _ = sp_round(node, t, local, self.mailbox, self.graph,
                                          self.ctl.temperature, self.ctl.coordinated, self._weights)
                st.nodes[node].weights = pw
                if self.tracing:
                    for lk, w in zip(wv.links, wv.values):
                        self.weight_trace.append((t, node, _link_name(lk), local[lk], eff[lk], w))
        for node in self.graph.intersections:
            ns = st.nodes[node]
            if len(self.phase_links[node]) < 2 or ns.co_left > 0:
                if self.use_outflows and len(self.phase_links[node]) == 1 and node in self.forecasters:
                    self._publish(node, self._serve_in_order(self.phase_links[node][0], t + ns.co_left), t)
                continue
            if kind != "bp" and ns.call_since is None and self._other_phase_waiting(node, ns):
                ns.call_since = t
            if kind == "bp":
                if t >= ns.bp.next_decision:
                    ns.bp.phase = ns.phase
                    inc = self.incoming[node]
                    qv = [len(st.queues[lk]) for lk in inc]
                    d = bp_signal_step(ns.bp, qv, self.activations[node], t, extension=self.ctl.extension,
                                       min_green=self.ctl.min_green, changeover=self.ctl.changeover)
                    if isinstance(d, Switch):
                        self._switch(node, ns, d.phase)
                continue
            if ns.elapsed < self.ctl.min_green or t % self.ctl.replan_every:
                continue
            target = self._plan(node, ns)
            if target is None and ns.call_since is not None and t - ns.call_since >= self.ctl.max_green:
                # hard cap in case the plan keeps extending past max green
                target = self._next_waiting_phase(node, ns)
            if target is not None:
                self._switch(node, ns, target)
        if self._fresh_forecast:
            self.forecast.update(self._fresh_forecast)
            self._fresh_forecast.clear()

    def _next_waiting_phase(self, node: str, ns: NodeState) -> Optional[int]:
        q = self.state.queues
        m = len(self.phase_links[node])
        for k in range(1, m):
            p = (ns.phase + k) % m
            if any(q[lk] for lk in self.phase_links[node][p]):
                return p
        return None

    def _predicted(self, lk: Link, t: int) -> List[Tuple[int, int, int]]:
        """Jobs queued upstream of ``lk`` that the upstream plan sends onto it: ``(land, id, units)``."""
        up, node = lk
        fc = self.forecast.get(up)
        if not fc:
            return []
        travel = self.travel[lk]
        out = []
        for job, dep in fc:
            if job.next_hop == node and job.link[1] == up and job.exit_slot is None:
                out.append((max(dep, t) + travel, job.id, self.units.get(job.cls, 1)))
        return out

    def _plan(self, node: str, ns: NodeState) -> Optional[int]:
        """Phase to switch to now under the rolling-horizon schedule, or ``None`` to stay.

        Decisions depend only on the sensed jobs relative to ``t``, so they
        are memoized on that view together with the departure forecast.
        """
        st = self.state
        t = st.t
        q, fl = st.queues, st.inflight
        pred = ({lk: self._predicted(lk, t) for lk in self.incoming[node]}
                if self.use_outflows and node in self.listeners else None)
        if not any(q[lk] or fl[lk] or (pred and pred[lk]) for p, links in enumerate(self.phase_links[node])
                   if p != ns.phase for lk in links):
            # no conflicting demand in sight, so the plan keeps the current phase
            if self.use_outflows and node in self.forecasters:
                self._publish(node, self._serve_in_order(self.phase_links[node][ns.phase], t), t)
            return None
        ctl = self.ctl
        # the max-green clock runs from the first conflicting call
        since = ns.call_since if ns.call_since is not None else t
        elapsed = max(min(ns.elapsed, t - since), ctl.min_green)
        view = tuple((tuple(j.remaining for j in q[lk]),
                      tuple((j.land_slot - t, j.remaining) for j in fl[lk]),
                      tuple((a - t, u) for a, _, u in pred[lk]) if pred else ())
                     for lk in self.incoming[node])
        key = (node, ns.phase, elapsed, ns.weights, view)
        hit = self._decisions.get(key)
        if hit is None:
            clusters = []
            for p, links in enumerate(self.phase_links[node]):
                per_link = {lk: ([(j.id, j.remaining) for j in q[lk]],
                                 [(j.land_slot, j.id, j.remaining) for j in fl[lk]] + (pred[lk] if pred else []))
                            for lk in links}
                clusters.append(build_phase_clusters(per_link, t, ctl.horizon, ctl.gap, self.rate, p))
            hit = self._decide(ns, clusters, elapsed, node)
            if len(self._decisions) > 500_000:
                self._decisions.clear()
            self._decisions[key] = hit
        decision, template = hit
        if self.use_outflows:
            self._publish(node, template, t)
        return decision

    def _publish(self, node: str, template, t: int) -> None:
        """Turn ``(link, queue position, slots from now)`` entries into a job forecast."""
        if node not in self.forecasters:
            return
        q = self.state.queues
        self._fresh_forecast[node] = [(q[lk][pos], t + rel) for lk, pos, rel in template]

    def _serve_in_order(self, links, start: int, t: Optional[int] = None):
        """Forecast template for serving each link's queue back to back from ``start``."""
        t = self.state.t if t is None else t
        out = []
        for lk in links:
            cursor = start
            for pos, job in enumerate(self.state.queues[lk]):
                out.append((lk, pos, cursor - t))
                cursor += -(-job.remaining // self.rate)
        return out

    def _schedule_template(self, node: str, inst: SchedulingInstance, sched, t: int):
        """Forecast template from a planned schedule: queued jobs leave in queue order
        once their cluster starts."""
        where = {}
        for lk in self.incoming[node]:
            for pos, job in enumerate(self.state.queues[lk]):
                where[job.id] = (lk, pos, job.remaining)
        cursor: Dict[Link, int] = {}
        out = []
        for sc in sorted(sched.order, key=lambda c: c.ast):
            for jid in inst.clusters[sc.phase][sc.index].jobs:
                info = where.get(jid)
                if info is None:
                    continue
                lk, pos, rem = info
                d = max(cursor.get(lk, sc.ast), sc.ast)
                out.append((lk, pos, d - t))
                cursor[lk] = d + -(-rem // self.rate)
        return out

    def _decide(self, ns: NodeState, clusters, elapsed: int, node: str):
        """``(phase to switch to or None, forecast template)``."""
        t = self.state.t
        ctl = self.ctl
        fc = self.use_outflows and node in self.forecasters
        others = [p for p, c in enumerate(clusters) if c and p != ns.phase]
        if not others:
            return None, self._serve_in_order(self.phase_links[node][ns.phase], t) if fc else ()
        if len(clusters) == 2 and not clusters[ns.phase]:
            # only one order exists: serve the other phase, as soon as its green would not idle
            p = others[0]
            template = self._serve_in_order(self.phase_links[node][p], t + ctl.changeover) if fc else ()
            return (p if clusters[p][0].arr <= t + ctl.changeover else None), template
        inst = SchedulingInstance(tuple(tuple(c) for c in clusters), changeover=ctl.changeover,
                                  min_green=ctl.min_green, max_green=ctl.max_green,
                                  rate=self.rate, current_phase=ns.phase, elapsed=elapsed,
                                  weights=ns.weights, now=t)
        inst, sched = enforce_max_green(inst, horizon=ctl.horizon)
        template = self._schedule_template(node, inst, sched, t) if fc else ()
        ivs = sched.intervals
        if len(ivs) < 2 or ivs[0].end > t:
            return None, template
        nxt = ivs[1]
        if nxt.served and nxt.served[0].ast > nxt.start:
            # the next phase would only idle at the start of its green: switch later
            return None, template
        return nxt.phase, template

    def _serve(self) -> None:
        st = self.state
        t = st.t
        for node in self.graph.intersections:
            ns = st.nodes[node]
            links = self.phase_links[node]
            if not links:
                continue
            if ns.co_left > 0:
                ns.co_left -= 1
                continue
            ns.elapsed += 1
            for lk in links[ns.phase]:
                q = st.queues[lk]
                budget = self.rate
                while budget > 0 and q:
                    job = q[0]
                    visit = job.visits[-1]
                    if visit[2] is None:
                        visit[2] = t
                        job.delay += t - visit[1]
                        if self.tracing:
                            self._log("start", _link_name(lk), job.id)
                    use = min(budget, job.remaining)
                    job.remaining -= use
                    budget -= use
                    if job.remaining > 0:
                        break
                    q.popleft()
                    self._change(lk, -1)
                    job.queue_time += t - visit[1]
                    if self.tracing:
                        self._log("depart", _link_name(lk), job.id)
                    self._forward(job, lk, t)

    def _forward(self, job, lk: Link, t: int) -> None:
        st = self.state
        if job.next_hop is None:
            job.exit_slot = t
            st.exited += 1
            self._log("exit", lk[1], job.id)
            if job.entry_slot >= self.config.burn_in:
                self.delays.append(job.delay)
                self.queue_times.append(job.queue_time)
            return
        job.remaining = self.units.get(job.cls, 1)
        self._depart_onto(job, (lk[1], job.next_hop), t)

    def step(self) -> SimState:
        st = self.state
        self._inject()
        self._land()
        self._control()
        self._serve()
        if self.ctl.kind == "sp":
            self.mailbox.deliver()
        if st.t + 1 == self.config.burn_in:
            self._reset_link_stats(st.t + 1)
        if st.t >= self.config.burn_in:
            self.totals.append(self.total_q)
            self.lyap_trace.append(self.lyap)
        if self.check:
            held = self.total_q + self.in_flight_count
            if st.injected != held + st.exited:
                raise AssertionError(f"job conservation broken at slot {st.t}")
        st.t += 1
        return st

    def run(self) -> MetricsReport:
        # the loop allocates many short-lived acyclic objects that reference
        # counting frees; pausing the cycle collector saves ~20% on big heaps
        was_enabled = gc.isenabled()
        gc.disable()
        try:
            while self.state.t < self.config.horizon:
                self.step()
        finally:
            if was_enabled:
                gc.enable()
        return self.report()

    def report(self) -> MetricsReport:
        T = self.state.t
        b = min(self.config.burn_in, T)
        for i in range(len(self.served_links)):
            span = T - self.last_change[i]
            if span > 0:
                q = self.qlen[i]
                self.link_sum[i] += q * span
                self.link_sumsq[i] += q * q * span
                self.last_change[i] = T
        meta = self.config.metadata()
        return summarize(self.delays, self.queue_times, self.totals, self.served_links,
                         self.link_sum, self.link_sumsq, self.state.injected,
                         self.state.injected - self.state.exited, T - b, self.lyap_trace,
                         sum(self.mailbox.stale.values()), meta)


@dataclass
class RunResult:
    report: MetricsReport
    events: List[Tuple[int, str, str, int]]
    simulation: Simulation


def run(config: ScenarioConfig, check: bool = False) -> RunResult:
    sim = Simulation(config, check=check)
    rep = sim.run()
    return RunResult(rep, sim.state.events, sim)


def run_replications(config: ScenarioConfig, seeds: Sequence[int]) -> Tuple[List[MetricsReport], dict]:
    """Independent runs, one per seed, plus pooled mean/std of the per-run mean delay."""
    if not seeds:
        raise ConfigError("run_replications needs at least one seed")
    reports = []
    for s in seeds:
        cfg = ScenarioConfig(config.topology, config.demand, config.controller, config.horizon, s,
                             config.burn_in, False)
        reports.append(run(cfg).report)
    return reports, pooled(reports)


def weights_csv(rows: Sequence[Tuple[int, str, str, int, float, float]]) -> str:
    lines = ["slot,node,link,queue,effective_queue,weight\n"]
    lines += [f"{t},{n},{lk},{q},{e!r},{w!r}\n" for t, n, lk, q, e, w in rows]
    return "".join(lines)


def events_csv(events: Sequence[Tuple[int, str, str, int]]) -> str:
    lines = ["slot,kind,where,job\n"]
    lines += [f"{t},{k},{w},{j}\n" for t, k, w, j in events]
    return "".join(lines)
