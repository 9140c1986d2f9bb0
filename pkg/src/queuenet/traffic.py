"""Job arrivals under piecewise-constant demand and cluster aggregation."""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .topology import ClassSpec, Link, Phase

SLOTS_PER_HOUR = 3600
# Uniform draws carried by each job for its routing decisions.
ROUTE_DRAWS = 16


class Job:
    """A job travelling through the network.

    ``visits`` holds one ``(node, arrival_slot, service_start)`` record per
    node reached; ``service_start`` stays ``None`` until service begins.
    """

    __slots__ = ("id", "cls", "entry_slot", "visits", "link", "delay", "queue_time",
                 "exit_slot", "remaining", "next_hop", "draws", "hop", "land_slot")

    def __init__(self, job_id: int, cls: str, entry_slot: int, link: Link, units: int,
                 draws: Sequence[float] = ()):
        self.id = job_id
        self.cls = cls
        self.entry_slot = entry_slot
        self.visits: List[list] = []
        self.link = link
        self.delay = 0
        self.queue_time = 0
        self.exit_slot: Optional[int] = None
        self.remaining = units
        self.next_hop: Optional[str] = None
        self.draws = list(draws)
        self.hop = 0
        self.land_slot = entry_slot

    def next_draw(self, seed: int) -> float:
        if self.hop >= len(self.draws):
            extra = np.random.default_rng([seed, self.id, self.hop, 7]).random(ROUTE_DRAWS)
            self.draws.extend(extra.tolist())
        u = self.draws[self.hop]
        self.hop += 1
        return u

    def __repr__(self):
        return f"Job({self.id}, {self.cls}, link={self.link})"


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    rate: float  # jobs per hour
    line: Optional[int] = field(default=None, compare=False)


@dataclass
class DemandProfile:
    """Piecewise-constant arrival rates per entry link plus a global class mix."""

    segments: Dict[Link, List[Segment]]
    classes: Tuple[ClassSpec, ...] = (ClassSpec("job", 1.0, 1),)

    def __post_init__(self):
        for link, segs in self.segments.items():
            segs.sort(key=lambda s: s.start)
            for a, b in zip(segs, segs[1:]):
                if b.start != a.end:
                    raise ConfigError(f"demand segments on {link[0]}->{link[1]} are not contiguous",
                                      b.line)
            for s in segs:
                if s.end <= s.start or s.rate < 0:
                    raise ConfigError(f"bad demand segment [{s.start}, {s.end}) rate {s.rate}", s.line)
        if not self.classes:
            raise ConfigError("demand needs at least one job class")
        total = sum(c.share for c in self.classes)
        if abs(total - 1.0) > 1e-9 or any(c.share < 0 for c in self.classes):
            raise ConfigError(f"class shares must be >= 0 and sum to 1 (got {total:.6g})",
                              self.classes[0].line)
        self._links = sorted(self.segments)
        self._starts = {lk: [s.start for s in self.segments[lk]] for lk in self._links}
        self._cum = np.cumsum([c.share for c in self.classes]).tolist()

    @property
    def links(self) -> List[Link]:
        return list(self._links)

    def rate(self, link: Link, slot: int) -> float:
        """Arrival rate on ``link`` at ``slot`` in jobs per hour."""
        segs = self.segments.get(link)
        if not segs:
            return 0.0
        k = bisect_right(self._starts[link], slot) - 1
        if k < 0 or slot >= segs[k].end:
            return 0.0
        return segs[k].rate

    def rates_per_slot(self, slot: int) -> np.ndarray:
        return np.array([self.rate(lk, slot) for lk in self._links]) / SLOTS_PER_HOUR

    def expected_jobs(self, start: int, end: int) -> float:
        total = 0.0
        for segs in self.segments.values():
            for s in segs:
                lo, hi = max(s.start, start), min(s.end, end)
                if hi > lo:
                    total += s.rate * (hi - lo) / SLOTS_PER_HOUR
        return total

    def class_of(self, u: float) -> ClassSpec:
        if len(self.classes) == 1:
            return self.classes[0]
        k = bisect_right(self._cum, u)
        return self.classes[min(k, len(self.classes) - 1)]


def split_network_rate(links: Iterable[Link], pieces: Sequence[Tuple[int, int, float]],
                       scale: float = 1.0) -> Dict[Link, List[Segment]]:
    """Spread network-wide ``(start, end, jobs/hour)`` pieces evenly over ``links``."""
    links = sorted(links)
    if not links:
        return {}
    return {lk: [Segment(a, b, r * scale / len(links)) for a, b, r in pieces] for lk in links}


def slot_rng(seed: int, slot: int) -> np.random.Generator:
    """Generator owned by one ``(seed, slot)`` pair, independent of run history."""
    return np.random.default_rng([seed, slot])


def sample_arrivals(slot: int, profile: DemandProfile, rng: np.random.Generator,
                    next_id: int = 0, units: Mapping[str, int] | None = None) -> List[Job]:
    """Draw this slot's new jobs: Poisson counts per entry link, i.i.d. classes."""
    lam = profile.rates_per_slot(slot)
    if not lam.any():
        return []
    counts = rng.poisson(lam)
    total = int(counts.sum())
    if total == 0:
        return []
    class_u = rng.random(total)
    draws = rng.random((total, ROUTE_DRAWS))
    jobs = []
    n = 0
    for link, cnt in zip(profile.links, counts):
        for _ in range(int(cnt)):
            cs = profile.class_of(class_u[n])
            u = units.get(cs.name, cs.processing) if units else cs.processing
            jobs.append(Job(next_id + n, cs.name, slot, link, u, draws[n].tolist()))
            n += 1
    return jobs


@dataclass(frozen=True)
class Cluster:
    """A group of jobs on one link treated as a single scheduling unit.

    ``dep`` is the first slot after the cluster clears when service starts
    at ``arr``; for spread-out platoons it follows the last member.
    """

    size: int
    arr: int
    dep: int
    jobs: Tuple[int, ...] = ()
    phase: Optional[int] = None
    link: Optional[Link] = None
    needs_switch: bool = False
    work: int = 0  # processing units; 0 means one unit per job

    def __post_init__(self):
        if self.work == 0:
            object.__setattr__(self, "work", self.size)
        if self.size < 1:
            raise ValueError("cluster size must be >= 1")
        if self.dep < self.arr:
            raise ValueError("cluster dep precedes arr")


def _clear_time(items: Sequence[Tuple[int, int]], rate: int) -> int:
    t = float(items[0][0])
    for a, u in items:
        t = max(t, a) + u / rate
    return math.ceil(t - 1e-9)


def build_cluster_sequence(queued: Sequence[Tuple[int, int]], approaching: Sequence[Tuple[int, int, int]],
                           now: int, horizon: int, gap_threshold: int = 3, rate: int = 1,
                           link: Optional[Link] = None) -> List[Cluster]:
    """Aggregate one link's jobs into clusters.

    ``queued`` holds ``(job_id, units)`` for jobs already waiting (their
    arrival is taken as ``now``); ``approaching`` holds
    ``(arrival_slot, job_id, units)``. Jobs whose predicted arrival is
    ``now + horizon`` or later are left out.
    """
    items = [(now, jid, u) for jid, u in queued]
    items += sorted((max(a, now), jid, u) for a, jid, u in approaching if a < now + horizon)
    if not items:
        return []
    groups: List[List[Tuple[int, int, int]]] = [[items[0]]]
    for it in items[1:]:
        if it[0] - groups[-1][-1][0] <= gap_threshold:
            groups[-1].append(it)
        else:
            groups.append([it])
    out = []
    for g in groups:
        out.append(Cluster(size=len(g), arr=g[0][0], dep=_clear_time([(a, u) for a, _, u in g], rate),
                           jobs=tuple(jid for _, jid, _ in g), link=link, work=sum(u for _, _, u in g)))
    return out


def merge_nonconflicting(sequences: Mapping[Link, Sequence[Cluster]], phase: Phase | Iterable[Link],
                         phase_index: Optional[int] = None) -> List[Cluster]:
    """Merge the cluster sequences of a phase's links into one virtual queue.

    Clusters are ordered by ``arr`` with ties broken by link id; each link's
    own order is preserved.
    """
    links = phase.links if isinstance(phase, Phase) else tuple(phase)
    keyed = []
    for lk in sorted(links):
        for k, c in enumerate(sequences.get(lk, ())):
            keyed.append(((c.arr, lk, k), c))
    keyed.sort(key=lambda kc: kc[0])
    if phase_index is None:
        return [c for _, c in keyed]
    return [replace(c, phase=phase_index) for _, c in keyed]


class ArrivalStream:
    """Arrival sequence of one run, drawn in chunks from a generator owned by the seed.

    The stream depends only on ``(profile, seed)``, so every controller run
    with the same seed sees exactly the same jobs and routing draws.
    """

    def __init__(self, profile: DemandProfile, seed: int, units: Mapping[str, int] | None = None,
                 chunk: int = 4096):
        self.profile = profile
        self.units = units
        self.chunk = chunk
        self._rng = np.random.default_rng([seed, 0x5EED])
        self._links = profile.links
        self._next_id = 0
        self._base = 0
        self._buckets: List[List[Job]] = []

    def _fill(self, start: int) -> None:
        n = self.chunk
        links = self._links
        lam = np.zeros((n, len(links)))
        for j, lk in enumerate(links):
            for s in self.profile.segments[lk]:
                lo, hi = max(s.start, start), min(s.end, start + n)
                if hi > lo:
                    lam[lo - start:hi - start, j] = s.rate / SLOTS_PER_HOUR
        counts = self._rng.poisson(lam)
        total = int(counts.sum())
        class_u = self._rng.random(total)
        draws = self._rng.random((total, ROUTE_DRAWS)).tolist()
        buckets: List[List[Job]] = [[] for _ in range(n)]
        k = 0
        for i, j in zip(*np.nonzero(counts)):
            for _ in range(int(counts[i, j])):
                cs = self.profile.class_of(class_u[k])
                u = self.units.get(cs.name, cs.processing) if self.units else cs.processing
                buckets[i].append(Job(self._next_id, cs.name, start + int(i), links[j], u, draws[k]))
                self._next_id += 1
                k += 1
        self._base = start
        self._buckets = buckets

    def jobs_at(self, slot: int) -> List[Job]:
        """New jobs of ``slot``; slots must be requested in increasing order."""
        if not self._links:
            return []
        while slot >= self._base + len(self._buckets):
            self._fill(self._base + len(self._buckets))
        if slot < self._base:
            raise ValueError("arrival stream only moves forward")
        return self._buckets[slot - self._base]


DEMAND_TIERS = {"high": 528.0, "medium": 354.0, "low": 236.0}


@dataclass(frozen=True)
class DemandEntry:
    """Rate on one entry link, or a network-wide rate split evenly over all
    entry links when ``link`` is ``None``."""

    link: Optional[Link]
    start: int
    end: int
    rate: float  # jobs per hour
    line: Optional[int] = field(default=None, compare=False)


@dataclass
class DemandSpec:
    entries: List[DemandEntry] = field(default_factory=list)
    classes: Tuple[ClassSpec, ...] = (ClassSpec("job", 1.0, 1),)
    scale: float = 1.0

    def profile(self, entry_links: Sequence[Link]) -> DemandProfile:
        entry = set(entry_links)
        segs: Dict[Link, List[Segment]] = {lk: [] for lk in sorted(entry)}
        for e in self.entries:
            targets = sorted(entry) if e.link is None else [e.link]
            rate = e.rate * self.scale / (len(targets) if e.link is None and targets else 1)
            for lk in targets:
                if lk not in entry:
                    raise ConfigError(f"demand on {lk[0]}->{lk[1]}, which is not an entry link", e.line)
                segs[lk].append(Segment(e.start, e.end, rate, e.line))
        return DemandProfile({lk: s for lk, s in segs.items() if s}, self.classes)

    def with_tier(self, tier: str, horizon: int) -> "DemandSpec":
        """Constant network-wide demand at a named tier for the whole run."""
        if tier not in DEMAND_TIERS:
            raise ConfigError(f"unknown demand tier {tier!r}")
        return DemandSpec([DemandEntry(None, 0, max(horizon, 1), DEMAND_TIERS[tier])],
                          self.classes, self.scale)


def build_phase_clusters(per_link: Mapping[Link, Tuple[Sequence[Tuple[int, int]], Sequence[Tuple[int, int, int]]]],
                         now: int, horizon: int, gap_threshold: int = 3, rate: int = 1,
                         phase_index: Optional[int] = None) -> List[Cluster]:
    """Cluster the jobs of all links of one phase on a shared timeline.

    ``per_link`` maps each link to ``(queued, approaching)`` as in
    ``build_cluster_sequence``. Links of a phase are served side by side, so
    a cluster's ``dep`` and ``work`` follow its most loaded link rather than
    the sum over links.
    """
    items = []
    for lk in sorted(per_link):
        queued, approaching = per_link[lk]
        items += [(now, lk, jid, u) for jid, u in queued]
        items += [(max(a, now), lk, jid, u) for a, jid, u in approaching if a < now + horizon]
    if not items:
        return []
    items.sort(key=lambda it: (it[0], it[1]))
    groups: List[list] = [[items[0]]]
    for it in items[1:]:
        if it[0] - groups[-1][-1][0] <= gap_threshold:
            groups[-1].append(it)
        else:
            groups.append([it])
    out = []
    for g in groups:
        by_link: Dict[Link, List[Tuple[int, int]]] = {}
        for a, lk, _, u in g:
            by_link.setdefault(lk, []).append((a, u))
        dep = max(_clear_time(v, rate) for v in by_link.values())
        work = max(sum(u for _, u in v) for v in by_link.values())
        out.append(Cluster(size=len(g), arr=g[0][0], dep=dep, jobs=tuple(it[2] for it in g),
                           phase=phase_index, work=work))
    return out
