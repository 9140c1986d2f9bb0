"""Delay and queue statistics, the stability estimator and Little's-law check."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NotSteady
from .topology import Link

PLATEAU_TOL = 0.10


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


@dataclass
class MetricsReport:
    """Per-run statistics.

    ``delays`` and ``queue_times`` cover exited jobs only; jobs still in the
    network at the horizon are counted in ``censored``.
    """

    delays: np.ndarray
    queue_times: np.ndarray
    queue_totals: np.ndarray
    links: Tuple[Link, ...]
    link_queue_mean: np.ndarray
    link_queue_std: np.ndarray
    injected: int
    censored: int
    horizon: int
    lyapunov: np.ndarray = field(default_factory=lambda: np.zeros(0))
    staleness: int = 0
    metadata: Dict[str, str] = field(default_factory=dict)

    @property
    def throughput(self) -> int:
        return int(self.delays.size)

    @property
    def mean_delay(self) -> Optional[float]:
        return float(self.delays.mean()) if self.delays.size else None

    @property
    def std_delay(self) -> Optional[float]:
        return float(self.delays.std(ddof=1)) if self.delays.size > 1 else None

    @property
    def median_delay(self) -> Optional[float]:
        return float(np.median(self.delays)) if self.delays.size else None

    def percentile(self, q: float) -> Optional[float]:
        return float(np.percentile(self.delays, q)) if self.delays.size else None

    @property
    def q_bar(self) -> float:
        return float(self.queue_totals.mean()) if self.queue_totals.size else 0.0

    def cdf(self) -> Tuple[np.ndarray, np.ndarray]:
        """Distinct delay values and the fraction of exited jobs at or below each."""
        if not self.delays.size:
            return np.zeros(0), np.zeros(0)
        vals, counts = np.unique(self.delays, return_counts=True)
        return vals, np.cumsum(counts) / self.delays.size

    def link_table(self, threshold: float = 0.0) -> List[Tuple[Link, float, float]]:
        rows = [(lk, float(m), float(s)) for lk, m, s in
                zip(self.links, self.link_queue_mean, self.link_queue_std) if m > threshold]
        return rows

    def summary(self) -> Dict[str, str]:
        out = {
            "exited": _fmt(self.throughput),
            "injected": _fmt(self.injected),
            "censored": _fmt(self.censored),
            "horizon": _fmt(self.horizon),
            "mean_delay": _fmt(self.mean_delay),
            "std_delay": _fmt(self.std_delay),
            "median_delay": _fmt(self.median_delay),
            "p90_delay": _fmt(self.percentile(90)),
            "q_bar": _fmt(self.q_bar),
            "staleness": _fmt(self.staleness),
        }
        for k, v in self.metadata.items():
            out[f"meta.{k}"] = v
        return out

    def summary_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in sorted(self.summary().items()))

    def delays_csv(self) -> str:
        buf = io.StringIO()
        buf.write("delay,queue_time\n")
        for d, q in zip(self.delays.tolist(), self.queue_times.tolist()):
            buf.write(f"{d},{q}\n")
        return buf.getvalue()

    def queues_csv(self) -> str:
        buf = io.StringIO()
        buf.write("slot,total_queue\n")
        for t, q in enumerate(self.queue_totals.tolist()):
            buf.write(f"{t},{q}\n")
        return buf.getvalue()

    def links_csv(self) -> str:
        buf = io.StringIO()
        buf.write("from,to,mean_queue,std_queue\n")
        for (u, v), m, s in zip(self.links, self.link_queue_mean.tolist(), self.link_queue_std.tolist()):
            buf.write(f"{u},{v},{m!r},{s!r}\n")
        return buf.getvalue()

    def cdf_csv(self) -> str:
        vals, frac = self.cdf()
        buf = io.StringIO()
        buf.write("delay,fraction\n")
        for v, f in zip(vals.tolist(), frac.tolist()):
            buf.write(f"{v},{f!r}\n")
        return buf.getvalue()

    def serialize(self) -> str:
        """Every table of the report as one deterministic text blob."""
        parts = [("summary", self.summary_text()), ("delays", self.delays_csv()),
                 ("queues", self.queues_csv()), ("links", self.links_csv()), ("cdf", self.cdf_csv())]
        return "".join(f"## {name}\n{body}" for name, body in parts)


def summarize(delays: Sequence[int], queue_times: Sequence[int], queue_totals: Sequence[int],
              links: Sequence[Link], link_sum: Sequence[float], link_sumsq: Sequence[float],
              injected: int, censored: int, horizon: int, lyapunov: Sequence[float] = (),
              staleness: int = 0, metadata: Optional[Dict[str, str]] = None) -> MetricsReport:
    """Build a report from the raw accumulators of a finished run."""
    T = max(horizon, 1)
    s = np.asarray(link_sum, dtype=float)
    ss = np.asarray(link_sumsq, dtype=float)
    mean = s / T
    std = np.sqrt(np.maximum(ss / T - mean ** 2, 0.0))
    if horizon == 0:
        mean = np.zeros_like(s)
        std = np.zeros_like(s)
    return MetricsReport(
        delays=np.asarray(delays, dtype=np.int64),
        queue_times=np.asarray(queue_times, dtype=np.int64),
        queue_totals=np.asarray(queue_totals, dtype=np.int64),
        links=tuple(links), link_queue_mean=mean, link_queue_std=std,
        injected=int(injected), censored=int(censored), horizon=int(horizon),
        lyapunov=np.asarray(lyapunov, dtype=float), staleness=int(staleness),
        metadata=dict(metadata or {}),
    )


@dataclass
class StabilityReport:
    q_bar: float
    epsilon: Optional[float]
    n_queues: Optional[int]
    bound: Optional[float]
    bounded: bool
    half_mean: float
    late_mean: float
    drift: np.ndarray

    @property
    def within_bound(self) -> Optional[bool]:
        return None if self.bound is None else self.q_bar <= self.bound


def stability_estimate(queue_totals: Sequence[float], window: Optional[int] = None, *,
                       lyapunov: Optional[Sequence[float]] = None, epsilon: Optional[float] = None,
                       n_queues: Optional[int] = None) -> StabilityReport:
    """Time-averaged total queue, plateau verdict and the ``N^2 / (2 eps)`` bound.

    The verdict looks at the last ``window`` slots: the run counts as
    bounded when the mean over their final quarter does not exceed the mean
    over their first half by more than 10%.
    """
    q = np.asarray(queue_totals, dtype=float)
    T = q.size
    window = T if window is None else window
    if window > T:
        raise ValueError(f"window {window} longer than run {T}")
    q_bar = float(q.mean()) if T else 0.0
    seg = q[T - window:] if window else q[:0]
    half = float(seg[: max(1, window // 2)].mean()) if window else 0.0
    late = float(seg[-max(1, window // 4):].mean()) if window else 0.0
    bounded = late <= half * (1 + PLATEAU_TOL) + 1e-12
    bound = None
    if epsilon is not None and n_queues is not None and epsilon > 0:
        bound = n_queues ** 2 / (2 * epsilon)
    drift = np.diff(np.asarray(lyapunov, dtype=float)) if lyapunov is not None else np.zeros(0)
    return StabilityReport(q_bar, epsilon, n_queues, bound, bounded, half, late, drift)


def littles_law_check(report: MetricsReport, stability: Optional[StabilityReport] = None) -> float:
    """Relative gap between the time-averaged queue and arrival rate times time in queue."""
    if stability is None:
        stability = stability_estimate(report.queue_totals)
    if not stability.bounded:
        raise NotSteady("queue totals have not plateaued")
    if report.throughput == 0 or report.horizon == 0:
        return 0.0
    lam = report.throughput / report.horizon
    w = float(report.queue_times.mean())
    lw = lam * w
    if lw == 0:
        return 0.0 if report.q_bar == 0 else float("inf")
    return abs(report.q_bar - lw) / lw


def pooled(reports: Sequence[MetricsReport]) -> Dict[str, Optional[float]]:
    """Mean and std across runs of each run's mean delay."""
    means = sorted(r.mean_delay for r in reports if r.mean_delay is not None)
    if not means:
        return {"runs": len(reports), "mean": None, "std": None}
    arr = np.asarray(means)
    return {"runs": len(reports), "mean": float(arr.mean()),
            "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0}
