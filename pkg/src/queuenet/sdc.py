"""Schedule-driven control: phase scheduling of cluster sequences by forward DP.

Timing model shared by every schedule produced here (all in integer slots):

* Serving cluster ``c`` of the phase that is already green starts at
  ``max(t, arr(c))`` where ``t`` is when the previous cluster finished.
* Switching from phase ``a`` to ``b`` happens at ``max(t, green_start(a) +
  min_green(a))``; the changeover follows and ``b`` turns green after it.
* A cluster of ``|c|`` jobs needing ``work`` units occupies
  ``ceil(work / rate)`` slots and finishes no earlier than ``dep(c)``.
* A cluster flagged ``needs_switch`` must open a fresh green interval. When
  no other phase's cluster is placed in between, the controller serves the
  next phase in the cycle for its minimum green and comes back.

The DP state is (clusters consumed per phase, last served phase). Each state
keeps the Pareto set of (weighted delay, finish slot, green start) labels;
the future cost is nondecreasing in the last two, so dominated labels can be
dropped without losing optimality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

from .errors import HorizonTooShort, InvalidSplit, NegativeWait, NonTermination
from .traffic import Cluster

DEFAULT_CHANGEOVER = 5
DEFAULT_MIN_GREEN = 5
DEFAULT_MAX_GREEN = 55
DEFAULT_HORIZON = 120


def cluster_delay(c: Cluster, ast: int, weight: float = 1.0) -> float:
    """Weighted delay ``|c| * (ast - arr) * weight`` of one cluster."""
    if ast < c.arr:
        raise NegativeWait(f"start {ast} precedes arrival {c.arr}")
    if weight <= 0:
        raise ValueError("weight must be positive")
    return c.size * (ast - c.arr) * weight


def _per_phase(value, m: int, name: str) -> Tuple:
    if isinstance(value, (list, tuple)):
        if len(value) != m:
            raise ValueError(f"{name} needs one entry per phase")
        return tuple(value)
    return (value,) * m


@dataclass(frozen=True)
class SchedulingInstance:
    clusters: Tuple[Tuple[Cluster, ...], ...]
    changeover: int = DEFAULT_CHANGEOVER
    min_green: Tuple[int, ...] | int = DEFAULT_MIN_GREEN
    max_green: Tuple[Optional[int], ...] | int | None = DEFAULT_MAX_GREEN
    rate: Tuple[int, ...] | int = 1
    current_phase: int = 0
    elapsed: int = 0
    weights: Tuple[float, ...] | None = None
    now: int = 0

    def __post_init__(self):
        m = len(self.clusters)
        if m < 1:
            raise ValueError("instance needs at least one phase")
        object.__setattr__(self, "clusters", tuple(tuple(seq) for seq in self.clusters))
        object.__setattr__(self, "min_green", _per_phase(self.min_green, m, "min_green"))
        object.__setattr__(self, "max_green", _per_phase(self.max_green, m, "max_green"))
        object.__setattr__(self, "rate", _per_phase(self.rate, m, "rate"))
        w = self.weights if self.weights is not None else (1.0,) * m
        object.__setattr__(self, "weights", tuple(float(x) for x in _per_phase(w, m, "weights")))
        if any(x <= 0 for x in self.weights):
            raise ValueError("phase weights must be positive")
        if not 0 <= self.current_phase < m:
            raise ValueError("current phase out of range")
        if self.changeover < 0 or self.elapsed < 0:
            raise ValueError("changeover and elapsed must be >= 0")
        for lo, hi in zip(self.min_green, self.max_green):
            if hi is not None and lo > hi:
                raise ValueError("min_green exceeds max_green")
        for seq in self.clusters:
            for a, b in zip(seq, seq[1:]):
                if b.arr < a.arr:
                    raise ValueError("cluster sequence not sorted by arr")

    @property
    def n_phases(self) -> int:
        return len(self.clusters)

    def total_jobs(self) -> int:
        return sum(c.size for seq in self.clusters for c in seq)

    def service_slots(self, p: int, c: Cluster) -> int:
        return math.ceil(work_of(c) / self.rate[p])

    def break_phase(self, p: int) -> int:
        return (p + 1) % self.n_phases


def work_of(c: Cluster) -> int:
    return c.work


@dataclass(frozen=True)
class ServedCluster:
    phase: int
    index: int
    ast: int
    finish: int
    size: int
    arr: int


@dataclass
class GreenInterval:
    phase: int
    start: int
    end: int
    served: List[ServedCluster] = field(default_factory=list)

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass
class PhaseSchedule:
    """Ordered green intervals plus each cluster's actual start time."""

    intervals: List[GreenInterval]
    order: List[ServedCluster]
    total_delay: float
    phase_delay: Tuple[int, ...]
    horizon_exceeded: bool = False
    unscheduled: List[ServedCluster] = field(default_factory=list)
    now: int = 0

    @property
    def phases(self) -> List[Tuple[int, int, int]]:
        """``(phase, start, duration)`` triples."""
        return [(iv.phase, iv.start, iv.duration) for iv in self.intervals]

    def ast(self, phase: int, index: int) -> int:
        for s in self.order:
            if s.phase == phase and s.index == index:
                return s.ast
        raise KeyError((phase, index))

    def phase_at(self, slot: int) -> Optional[int]:
        for iv in self.intervals:
            if iv.start <= slot < iv.end:
                return iv.phase
        return None


# label layout: (delay, t, gs, parent, phase, ast, finish, switch_at, broke)
_DELAY, _T, _GS = 0, 1, 2


def _insert(front: list, label: tuple) -> None:
    d, t, g = label[0], label[1], label[2]
    for o in front:
        if o[0] <= d and o[1] <= t and o[2] <= g:
            return
    front[:] = [o for o in front if not (d <= o[0] and t <= o[1] and g <= o[2])]
    front.append(label)


def _step(inst: SchedulingInstance, w: Sequence[float], label: tuple, lp: int, p: int,
          c: Cluster) -> tuple:
    t, gs = label[_T], label[_GS]
    co = inst.changeover
    switch_at = None
    broke = False
    if p == lp and not (c.needs_switch and inst.n_phases > 1):
        base = t
    elif p == lp:
        q = inst.break_phase(p)
        switch_at = max(t, gs + inst.min_green[p])
        gs = switch_at + co + inst.min_green[q] + co
        base = gs
        broke = True
    else:
        switch_at = max(t, gs + inst.min_green[lp])
        gs = switch_at + co
        base = gs
    ast = max(base, c.arr)
    fin = max(ast + inst.service_slots(p, c), c.dep)
    delay = label[_DELAY] + w[p] * c.size * (ast - c.arr)
    return (delay, fin, gs, label, p, ast, fin, switch_at, broke)


def _dp_weights(inst: SchedulingInstance) -> Tuple[float, ...]:
    # uniform weights are replaced by 1.0 so scaling them never perturbs ties
    w = inst.weights
    return (1.0,) * len(w) if len(set(w)) == 1 else w


def plan_schedule(inst: SchedulingInstance, horizon: Optional[int] = None,
                  strict: bool = False) -> PhaseSchedule:
    """Minimum weighted-delay schedule over all order-preserving interleavings."""
    m = inst.n_phases
    sizes = tuple(len(seq) for seq in inst.clusters)
    w = _dp_weights(inst)
    start = (0.0, inst.now, inst.now - inst.elapsed, None, None, None, None, None, False)
    layers: List[dict] = [dict() for _ in range(sum(sizes) + 1)]
    layers[0][(tuple([0] * m), inst.current_phase)] = [start]
    for depth in range(sum(sizes)):
        for key in sorted(layers[depth]):
            counts, lp = key
            for p in range(m):
                k = counts[p]
                if k >= sizes[p]:
                    continue
                c = inst.clusters[p][k]
                nxt = list(counts)
                nxt[p] += 1
                nkey = (tuple(nxt), p)
                front = layers[depth + 1].setdefault(nkey, [])
                for label in layers[depth][key]:
                    _insert(front, _step(inst, w, label, lp, p, c))
    final = []
    for key, front in layers[-1].items():
        final.extend(front)
    best = min(final, key=lambda lb: (lb[_DELAY], lb[_T], _phase_path(lb)))
    return _assemble(inst, best, horizon, strict)


def _phase_path(label: tuple) -> Tuple[int, ...]:
    out = []
    while label[3] is not None:
        out.append(label[4])
        label = label[3]
    return tuple(reversed(out))


def _assemble(inst: SchedulingInstance, best: tuple, horizon: Optional[int],
              strict: bool) -> PhaseSchedule:
    path = []
    lb = best
    while lb[3] is not None:
        path.append(lb)
        lb = lb[3]
    path.reverse()
    co = inst.changeover
    counts = [0] * inst.n_phases
    cur = GreenInterval(inst.current_phase, inst.now - inst.elapsed, inst.now)
    intervals: List[GreenInterval] = []
    order: List[ServedCluster] = []
    t = inst.now
    for lb in path:
        p, ast, fin, switch_at, broke = lb[4], lb[5], lb[6], lb[7], lb[8]
        c = inst.clusters[p][counts[p]]
        if switch_at is not None:
            cur.end = switch_at
            intervals.append(cur)
            if broke:
                q = inst.break_phase(p)
                gq = switch_at + co
                intervals.append(GreenInterval(q, gq, gq + inst.min_green[q]))
                cur = GreenInterval(p, gq + inst.min_green[q] + co, 0)
            else:
                cur = GreenInterval(p, switch_at + co, 0)
        served = ServedCluster(p, counts[p], ast, fin, c.size, c.arr)
        counts[p] += 1
        cur.served.append(served)
        order.append(served)
        t = fin
    cur.end = max(t, cur.start)
    intervals.append(cur)

    phase_delay = [0] * inst.n_phases
    total = 0.0
    for s in order:
        phase_delay[s.phase] += s.size * (s.ast - s.arr)
        total += inst.weights[s.phase] * s.size * (s.ast - s.arr)
    sched = PhaseSchedule(intervals, order, total, tuple(phase_delay), now=inst.now)
    if horizon is not None:
        late = [s for s in order if s.finish > inst.now + horizon]
        if late:
            if strict:
                raise HorizonTooShort(f"{len(late)} clusters finish beyond the horizon")
            sched.horizon_exceeded = True
            sched.unscheduled = late
    return sched


def split_cluster(c: Cluster, at_count: int, rate: int = 1) -> Tuple[Cluster, Cluster]:
    """Split ``c`` after its first ``at_count`` jobs; the tail starts where the head clears."""
    if not 1 <= at_count < c.size:
        raise InvalidSplit(f"cannot split a cluster of {c.size} at {at_count}")
    work = work_of(c)
    head_work = max(at_count, work * at_count // c.size)
    tail_work = max(c.size - at_count, work - head_work)
    span = c.dep - c.arr
    head_dep = c.arr + max(math.ceil(head_work / rate), round(span * at_count / c.size))
    tail_dep = max(c.dep, head_dep + math.ceil(tail_work / rate))
    head = Cluster(at_count, c.arr, head_dep, c.jobs[:at_count], c.phase, c.link, c.needs_switch,
                   head_work)
    tail = Cluster(c.size - at_count, head_dep, tail_dep, c.jobs[at_count:], c.phase, c.link, True,
                   tail_work)
    return head, tail


def merge_clusters(head: Cluster, tail: Cluster) -> Cluster:
    return Cluster(head.size + tail.size, head.arr, max(head.dep, tail.dep), head.jobs + tail.jobs,
                   head.phase, head.link, head.needs_switch, head.work + tail.work)


def green_span(inst: SchedulingInstance, iv: GreenInterval, first: bool) -> int:
    """Green time an interval needs to serve its clusters.

    The interval that is green at planning time counts from when it turned
    green; later intervals count from their first cluster's start, so an
    idle wait for arrivals is not charged against max green.
    """
    if not iv.served:
        return 0
    begin = iv.start if first else iv.served[0].ast
    return iv.served[-1].finish - begin


def max_green_violation(inst: SchedulingInstance, sched: PhaseSchedule):
    """First ``(interval, cluster, limit)`` exceeding its max green, or ``None``."""
    if inst.n_phases < 2:
        return None
    for n, iv in enumerate(sched.intervals):
        cap = inst.max_green[iv.phase]
        if cap is None or not iv.served:
            continue
        begin = iv.start if n == 0 else iv.served[0].ast
        limit = begin + cap
        if iv.served[-1].finish > limit:
            for s in iv.served:
                if s.finish > limit:
                    return iv, s, limit
    return None


def enforce_max_green(inst: SchedulingInstance, sched: Optional[PhaseSchedule] = None,
                      horizon: Optional[int] = None) -> Tuple[SchedulingInstance, PhaseSchedule]:
    """Split offending clusters and re-plan until every green span fits max green.

    Returns the repaired instance together with its schedule.
    """
    if sched is None:
        sched = plan_schedule(inst, horizon)
    cap = 2 * inst.total_jobs() + 2
    for _ in range(cap):
        found = max_green_violation(inst, sched)
        if found is None:
            return inst, sched
        iv, s, limit = found
        p = s.phase
        c = inst.clusters[p][s.index]
        k = _largest_fitting_head(inst, p, c, s.ast, limit)
        seq = list(inst.clusters[p])
        if k >= 1:
            head, tail = split_cluster(c, k, inst.rate[p])
            if s.index + 1 < len(seq) and tail.arr > seq[s.index + 1].arr:
                # keep the sequence sorted when the successor overlaps the tail
                tail = replace(tail, arr=seq[s.index + 1].arr)
            seq[s.index:s.index + 1] = [head, tail]
        elif not c.needs_switch:
            seq[s.index] = replace(c, needs_switch=True)
        else:
            raise NonTermination(f"cluster of {c.size} cannot fit max green {inst.max_green[p]}")
        clusters = list(inst.clusters)
        clusters[p] = tuple(seq)
        inst = replace(inst, clusters=tuple(clusters))
        sched = plan_schedule(inst, horizon)
    raise NonTermination("max-green repair exceeded its iteration cap")


def _largest_fitting_head(inst: SchedulingInstance, p: int, c: Cluster, ast: int, limit: int) -> int:
    for k in range(c.size - 1, 0, -1):
        head, _ = split_cluster(c, k, inst.rate[p])
        if max(ast + inst.service_slots(p, head), head.dep) <= limit:
            return k
    return 0
