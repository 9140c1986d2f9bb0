"""Backpressure (max-weight) activation and its signal-control variant."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple, Union

EXTENSION = 2


def select_activation(queues: Sequence[float], activations: Sequence[Sequence[int]]) -> Tuple[int, ...]:
    """Activation vector maximizing ``pi . Q``; ties go to the lowest index."""
    if not activations:
        raise ValueError("node has no activation vectors")
    return tuple(activations[select_index(queues, activations)])


def select_index(queues: Sequence[float], activations: Sequence[Sequence[int]]) -> int:
    best, best_val = 0, None
    for n, pi in enumerate(activations):
        val = sum(q for q, a in zip(queues, pi) if a)
        if best_val is None or val > best_val:
            best, best_val = n, val
    return best


def phase_pressures(queues: Sequence[float], activations: Sequence[Sequence[int]]):
    return [sum(q for q, a in zip(queues, pi) if a) for pi in activations]


@dataclass
class BpState:
    phase: int = 0
    elapsed: int = 0
    next_decision: int = 0


@dataclass(frozen=True)
class Extend:
    slots: int = EXTENSION


@dataclass(frozen=True)
class Switch:
    phase: int


Decision = Union[Extend, Switch]


def bp_signal_step(state: BpState, queues: Sequence[float], activations: Sequence[Sequence[int]],
                   slot: int, *, extension: int = EXTENSION, min_green: int = 5,
                   changeover: int = 5) -> Decision:
    """Decide at a decision slot: extend the green or move to the next phase.

    The current phase is kept whenever its pressure ties the maximum.
    ``state`` is updated in place with the next decision slot.
    """
    pressures = phase_pressures(queues, activations)
    if len(activations) <= 1 or pressures[state.phase] >= max(pressures):
        state.next_decision = slot + extension
        return Extend(extension)
    nxt = (state.phase + 1) % len(activations)
    state.next_decision = slot + changeover + min_green
    return Switch(nxt)
