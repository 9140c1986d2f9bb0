import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from queuenet.errors import ConfigError
from queuenet.topology import ClassSpec, GridSpec, Phase, build_network
from queuenet.traffic import (ArrivalStream, Cluster, DemandEntry, DemandProfile, DemandSpec, Segment,
                              build_cluster_sequence, build_phase_clusters, merge_nonconflicting,
                              sample_arrivals, slot_rng)

LINK = ("s", "x")


def constant(rate, end=10**6):
    return DemandProfile({LINK: [Segment(0, end, rate)]})


def test_zero_rate_never_arrives():
    prof = constant(0.0)
    rng = np.random.default_rng(1)
    assert all(not sample_arrivals(t, prof, rng) for t in range(500))


def test_poisson_mean_one_per_slot():
    prof = constant(3600.0)
    rng = np.random.default_rng(11)
    n = sum(len(sample_arrivals(t, prof, rng)) for t in range(100_000))
    assert abs(n / 100_000 - 1.0) <= 0.01


def test_arrival_stream_mean_one_per_slot():
    stream = ArrivalStream(constant(3600.0), seed=5)
    n = sum(len(stream.jobs_at(t)) for t in range(100_000))
    assert abs(n / 100_000 - 1.0) <= 0.01


def test_sample_arrivals_deterministic_per_slot():
    prof = constant(1800.0)
    a = [j.id for j in sample_arrivals(42, prof, slot_rng(3, 42))]
    b = [j.id for j in sample_arrivals(42, prof, slot_rng(3, 42))]
    assert a == b
    da = [j.draws for j in sample_arrivals(42, prof, slot_rng(3, 42))]
    db = [j.draws for j in sample_arrivals(42, prof, slot_rng(3, 42))]
    assert da == db


def test_ramp_means_split_across_entry_links():
    g = build_network(GridSpec(4, 4))
    spec = DemandSpec([DemandEntry(None, 0, 1800, 236.0), DemandEntry(None, 1800, 3600, 354.0),
                       DemandEntry(None, 3600, 7200, 528.0)])
    prof = spec.profile(g.entry_links)
    assert len(prof.links) == 16
    for slot, expect in [(0, 0.0656), (1799, 0.0656), (1800, 0.0983), (5000, 0.1467)]:
        assert prof.rates_per_slot(slot).sum() == pytest.approx(expect, abs=5e-5)


def test_stream_total_within_three_sigma():
    g = build_network(GridSpec(2, 2))
    spec = DemandSpec([DemandEntry(None, 0, 3000, 2000.0), DemandEntry(None, 3000, 6000, 4000.0)])
    prof = spec.profile(g.entry_links)
    mean = prof.expected_jobs(0, 6000)
    stream = ArrivalStream(prof, seed=9)
    n = sum(len(stream.jobs_at(t)) for t in range(6000))
    assert abs(n - mean) <= 3 * math.sqrt(mean)


def test_stream_same_seed_identical():
    prof = constant(900.0)
    a, b = ArrivalStream(prof, 4), ArrivalStream(prof, 4)
    for t in range(5000):
        ja, jb = a.jobs_at(t), b.jobs_at(t)
        assert [(j.id, j.link, j.cls, j.draws) for j in ja] == [(j.id, j.link, j.cls, j.draws) for j in jb]


def test_class_mix():
    prof = DemandProfile({LINK: [Segment(0, 10**6, 3600.0)]},
                         (ClassSpec("car", 0.75, 1), ClassSpec("bus", 0.25, 3)))
    stream = ArrivalStream(prof, 2)
    jobs = [j for t in range(20_000) for j in stream.jobs_at(t)]
    share = sum(j.cls == "bus" for j in jobs) / len(jobs)
    assert share == pytest.approx(0.25, abs=0.01)
    assert {j.remaining for j in jobs if j.cls == "bus"} == {3}


def test_class_shares_must_sum_to_one():
    with pytest.raises(ConfigError):
        DemandProfile({LINK: [Segment(0, 10, 1.0)]}, (ClassSpec("a", 0.5), ClassSpec("b", 0.4)))


def test_segments_must_be_contiguous():
    with pytest.raises(ConfigError):
        DemandProfile({LINK: [Segment(0, 10, 1.0), Segment(12, 20, 1.0)]})


def test_cluster_sequence_empty():
    assert build_cluster_sequence([], [], now=0, horizon=100) == []


def test_queued_jobs_form_head_cluster():
    cs = build_cluster_sequence([(k, 1) for k in range(5)], [], now=7, horizon=100)
    assert [(c.size, c.arr) for c in cs] == [(5, 7)]


def test_gap_rule_example():
    approaching = [(a, k, 1) for k, a in enumerate([10, 11, 12, 30, 31])]
    cs = build_cluster_sequence([], approaching, now=0, horizon=100, gap_threshold=3)
    assert [c.size for c in cs] == [3, 2]
    assert [c.arr for c in cs] == [10, 30]
    assert cs[0].dep == 13


def test_horizon_cuts_far_jobs():
    approaching = [(a, k, 1) for k, a in enumerate([5, 50, 150])]
    cs = build_cluster_sequence([], approaching, now=0, horizon=120)
    assert sum(c.size for c in cs) == 2


def test_merge_single_link_identity():
    seq = [Cluster(2, 5, 7), Cluster(1, 20, 21)]
    assert merge_nonconflicting({("a", "x"): seq}, [("a", "x")]) == seq


def test_merge_two_links():
    a = [Cluster(1, 5, 6, link=("a", "x")), Cluster(1, 20, 21, link=("a", "x"))]
    b = [Cluster(1, 10, 11, link=("b", "x"))]
    merged = merge_nonconflicting({("a", "x"): a, ("b", "x"): b}, Phase("NS", (("a", "x"), ("b", "x"))))
    assert [c.arr for c in merged] == [5, 10, 20]


def test_merge_tie_goes_to_lower_link():
    a = [Cluster(1, 5, 6, link=("b", "x"))]
    b = [Cluster(2, 5, 7, link=("a", "x"))]
    merged = merge_nonconflicting({("b", "x"): a, ("a", "x"): b}, [("a", "x"), ("b", "x")], 1)
    assert [c.link for c in merged] == [("a", "x"), ("b", "x")]
    assert all(c.phase == 1 for c in merged)


def test_phase_clusters_serve_links_side_by_side():
    per_link = {("a", "x"): ([(1, 1), (2, 1), (3, 1)], []), ("b", "x"): ([(4, 1), (5, 1)], [])}
    cs = build_phase_clusters(per_link, now=10, horizon=100)
    assert len(cs) == 1
    assert cs[0].size == 5 and cs[0].arr == 10
    # the longer queue decides when the phase clears
    assert cs[0].dep == 13 and cs[0].work == 3


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 6), st.lists(st.integers(0, 200), max_size=25), st.integers(0, 6),
       st.integers(1, 150))
def test_clusters_partition_sensed_jobs(n_queued, arrivals, gap, horizon):
    now = 3
    queued = [(k, 1) for k in range(n_queued)]
    approaching = [(a, 100 + k, 1) for k, a in enumerate(sorted(arrivals))]
    cs = build_cluster_sequence(queued, approaching, now, horizon, gap)
    ids = [j for c in cs for j in c.jobs]
    expect = [k for k, _ in queued] + [jid for a, jid, _ in approaching if a < now + horizon]
    assert sorted(ids) == sorted(expect) and len(ids) == len(set(ids))
    assert all(c.arr <= c.dep and c.dep - c.arr >= c.size - 1 for c in cs)
    assert [c.arr for c in cs] == sorted(c.arr for c in cs)
