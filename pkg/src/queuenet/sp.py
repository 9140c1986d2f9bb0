"""Softpressure: queue-length softmax weights fed into schedule-driven control.

Each node turns its incoming queue lengths into softmax link weights,
optionally corrected by neighbor information (effective queue lengths),
and uses the resulting per-phase weights in the weighted-delay DP.

Neighbors exchange ``NeighborMessage`` values once per slot through a
two-buffer ``Mailbox``: everything read in slot ``t`` was written in an
earlier slot, so the weight recursion is lagged by one round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .topology import Link, NetworkGraph, Phase, RoutingTable

TINY = float(np.finfo(float).tiny)


def _softmax(values: Sequence[float], temperature: float) -> list:
    if not len(values):
        raise ValueError("softmax of an empty vector")
    x = [float(v) / temperature for v in values]
    top = max(x)
    e = [math.exp(v - top) for v in x]
    total = math.fsum(e)
    return [max(v / total, TINY) for v in e]


def softmax(values: Sequence[float], temperature: float = 1.0) -> np.ndarray:
    """Max-shifted softmax; entries that underflow are clamped to the smallest normal float."""
    return np.array(_softmax(values, temperature))


@dataclass(frozen=True)
class WeightVector:
    node: str
    links: Tuple[Link, ...]
    values: Tuple[float, ...]

    def __getitem__(self, link: Link) -> float:
        return self.values[self.links.index(link)]

    def as_dict(self) -> Dict[Link, float]:
        return dict(zip(self.links, self.values))

    @classmethod
    def uniform(cls, node: str, links: Sequence[Link]) -> "WeightVector":
        n = len(links)
        return cls(node, tuple(links), tuple([1.0 / n] * n) if n else ())


def local_weights(queues: Mapping[Link, float], node: str = "", temperature: float = 1.0) -> WeightVector:
    """Softmax of a node's incoming queue lengths."""
    links = tuple(sorted(queues))
    return WeightVector(node, links, tuple(_softmax([queues[lk] for lk in links], temperature)))


def coordinated_weights(effective: Mapping[Link, float], node: str = "",
                        temperature: float = 1.0) -> WeightVector:
    """Softmax of effective queue lengths (negative values are fine)."""
    return local_weights(effective, node, temperature)


@dataclass(frozen=True)
class NeighborMessage:
    sender: str
    slot: int
    queues: Mapping[Link, float]
    weights: Mapping[Link, float]


@dataclass
class Mailbox:
    """Two-buffer exchange: reads see only messages delivered at the last round."""

    inbox: Dict[str, NeighborMessage] = field(default_factory=dict)
    outbox: Dict[str, NeighborMessage] = field(default_factory=dict)
    stale: Dict[str, int] = field(default_factory=dict)

    def post(self, msg: NeighborMessage) -> None:
        self.outbox[msg.sender] = msg

    def deliver(self) -> None:
        # unsent messages keep their previous value so readers can fall back to it
        self.inbox.update(self.outbox)
        self.outbox = {}

    def read(self, reader: str, sender: str, slot: int) -> Optional[NeighborMessage]:
        msg = self.inbox.get(sender)
        if msg is None:
            return None
        if msg.slot >= slot:
            raise ValueError(f"message from {sender} stamped {msg.slot} read at {slot}")
        if msg.slot < slot - 1:
            self.stale[reader] = self.stale.get(reader, 0) + 1
        return msg


def effective_queues(node: str, local_q: Mapping[Link, float], messages: Mapping[str, NeighborMessage],
                     graph: NetworkGraph, routing: Optional[RoutingTable] = None) -> Dict[Link, float]:
    """Queue plus upstream push minus downstream repulsion for each incoming link.

    For link ``(s, i)``: ``Q_si + sum_h Q_hs w_hs eta(h,s,i) - sum_k Q_ik w_ik eta(s,i,k)``,
    with ``Q_hs, w_hs`` taken from ``s``'s message and ``Q_ik, w_ik`` from ``k``'s.
    Neighbors without a message contribute nothing.
    """
    routing = routing or graph.routing
    out = {}
    downstream = []
    for k in graph.out_neighbors[node]:
        msg = messages.get(k)
        if msg is not None:
            lk = (node, k)
            downstream.append((k, msg.queues.get(lk, 0.0) * msg.weights.get(lk, 0.0)))
    for s, i in graph.incoming(node):
        q = float(local_q.get((s, i), 0.0))
        msg = messages.get(s)
        if msg is not None:
            for h in graph.in_neighbors[s]:
                lk = (h, s)
                eta = routing.eta(h, s, i)
                if eta:
                    q += msg.queues.get(lk, 0.0) * msg.weights.get(lk, 0.0) * eta
        for k, qw in downstream:
            eta = routing.eta(s, i, k)
            if eta:
                q -= qw * eta
        out[(s, i)] = q
    return out


def phase_weights(w: WeightVector, phases: Sequence[Phase]) -> Tuple[float, ...]:
    """Sum member link weights per phase and renormalize over phases."""
    wd = dict(zip(w.links, w.values))
    raw = [math.fsum(wd[lk] for lk in ph.links) for ph in phases]
    total = math.fsum(raw)
    return tuple(max(x / total, TINY) for x in raw)


def sp_round(node: str, slot: int, local_q: Mapping[Link, float], mailbox: Mailbox, graph: NetworkGraph,
             temperature: float = 1.0, coordinated: bool = True, cache: Optional[dict] = None):
    """One decentralized round for ``node``.

    Returns ``(link weights, phase weights, effective queues, outgoing message)``.
    The message is posted to ``mailbox`` for neighbors' next round. ``cache``
    may hold weights already computed for identical effective queues.
    """
    inc = graph.incoming(node)
    if not inc:
        wv = WeightVector(node, (), ())
        msg = NeighborMessage(node, slot, {}, {})
        mailbox.post(msg)
        return wv, tuple(1.0 for _ in graph.phases[node]), {}, msg
    messages = {}
    if coordinated:
        for nb in graph.agent_neighbors[node]:
            msg = mailbox.read(node, nb, slot)
            if msg is not None:
                messages[nb] = msg
    local = {lk: float(local_q.get(lk, 0.0)) for lk in inc}
    eff = effective_queues(node, local_q, messages, graph) if messages else local
    key = (node, temperature, tuple(eff[lk] for lk in inc))
    hit = cache.get(key) if cache is not None else None
    if hit is None:
        wv = coordinated_weights(eff, node, temperature)
        pw = phase_weights(wv, graph.phases[node]) if graph.phases[node] else ()
        hit = (wv, pw, wv.as_dict())
        if cache is not None:
            if len(cache) > 200_000:
                cache.clear()
            cache[key] = hit
    wv, pw, wd = hit
    msg = NeighborMessage(node, slot, local, wd)
    mailbox.post(msg)
    return wv, pw, eff, msg
