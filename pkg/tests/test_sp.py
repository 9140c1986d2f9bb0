import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import four_node_loop, softmax_direct
from queuenet.sdc import SchedulingInstance, plan_schedule
from queuenet.sp import (Mailbox, NeighborMessage, WeightVector, coordinated_weights, effective_queues,
                         local_weights, phase_weights, softmax, sp_round)
from queuenet.topology import (GridSpec, LinkSpec, Phase, RouteSpec, TopologySpec, build_network)
from queuenet.traffic import Cluster


def test_symmetric_queues_uniform():
    assert softmax([0, 0]).tolist() == [0.5, 0.5]


def test_closed_form_two_links():
    w = local_weights({("a", "x"): 2, ("b", "x"): 0})
    e2 = math.exp(2)
    assert w[("a", "x")] == pytest.approx(e2 / (1 + e2), abs=1e-12)
    assert w.values == pytest.approx((0.880797, 0.119203), abs=1e-6)


def test_huge_queue_no_overflow():
    w = softmax([1000, 0])
    assert np.isfinite(w).all()
    assert w[0] == 1.0
    assert w[1] == np.finfo(float).tiny


def test_matches_direct_formula_on_small_inputs():
    rng = np.random.default_rng(2)
    for _ in range(100):
        q = rng.integers(0, 20, size=int(rng.integers(1, 6))).tolist()
        assert softmax(q) == pytest.approx(softmax_direct(q), rel=1e-12)


def test_softmax_properties_random():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        n = int(rng.integers(2, 7))
        q = rng.integers(0, 30, size=n).astype(float)
        w = softmax(q)
        assert abs(w.sum() - 1.0) <= 1e-9
        assert np.all(w > 0) and np.all(w <= 1)
        c = float(rng.integers(-50, 50))
        assert np.max(np.abs(softmax(q + c) - w)) <= 1e-9
        k = int(rng.integers(0, n))
        q2 = q.copy()
        q2[k] += 1
        w2 = softmax(q2)
        assert w2[k] > w[k]
        assert all(w2[j] < w[j] for j in range(n) if j != k)


def test_coordinated_equal_values_uniform():
    w = coordinated_weights({("a", "x"): -3.5, ("b", "x"): -3.5, ("c", "x"): -3.5})
    assert w.values == pytest.approx((1 / 3,) * 3, abs=1e-15)


def test_coordinated_difference_two():
    w = coordinated_weights({("a", "x"): 5.0, ("b", "x"): 3.0})
    e2 = math.exp(2)
    assert w.values == pytest.approx((e2 / (1 + e2), 1 / (1 + e2)), abs=1e-12)


def test_single_link_weight_one():
    assert coordinated_weights({("a", "x"): 7.0}).values == (1.0,)


def test_effective_queue_hand_case():
    g = four_node_loop()
    msgs = {"A": NeighborMessage("A", 0, {("D", "A"): 6}, {("D", "A"): 1.0}),
            "D": NeighborMessage("D", 0, {("C", "D"): 2}, {("C", "D"): 1.0})}
    eff = effective_queues("C", {("A", "C"): 4, ("B", "C"): 0}, msgs, g)
    assert eff[("A", "C")] == 5


def test_effective_queue_zero_neighbors():
    g = four_node_loop()
    msgs = {"A": NeighborMessage("A", 0, {("D", "A"): 0}, {("D", "A"): 1.0}),
            "D": NeighborMessage("D", 0, {("C", "D"): 0}, {("C", "D"): 1.0})}
    eff = effective_queues("C", {("A", "C"): 4, ("B", "C"): 1}, msgs, g)
    assert eff == {("A", "C"): 4, ("B", "C"): 1}


def test_boundary_node_only_downstream_term():
    g = four_node_loop()
    msgs = {"D": NeighborMessage("D", 0, {("C", "D"): 2}, {("C", "D"): 1.0})}
    # B has no upstream neighbor; (B, C) routes nowhere, so only (A, C) is repelled
    eff = effective_queues("C", {("A", "C"): 4, ("B", "C"): 1}, msgs, g)
    assert eff == {("A", "C"): 2, ("B", "C"): 1}


def test_phase_weights_one_link_each():
    w = WeightVector("x", (("a", "x"), ("b", "x")), (0.3, 0.7))
    ph = [Phase("P", (("a", "x"),)), Phase("Q", (("b", "x"),))]
    assert phase_weights(w, ph) == pytest.approx((0.3, 0.7))


def test_phase_weights_sum_then_renormalize():
    w = WeightVector("x", (("a", "x"), ("b", "x"), ("c", "x")), (0.3, 0.2, 0.5))
    ph = [Phase("NS", (("a", "x"), ("b", "x"))), Phase("EW", (("c", "x"),))]
    assert phase_weights(w, ph) == pytest.approx((0.5, 0.5))


def test_uniform_links_equal_phases():
    links = (("a", "x"), ("b", "x"), ("c", "x"), ("d", "x"))
    w = WeightVector.uniform("x", links)
    ph = [Phase("NS", links[:2]), Phase("EW", links[2:])]
    assert phase_weights(w, ph) == pytest.approx((0.5, 0.5))


def test_mailbox_is_lagged_one_round():
    mb = Mailbox()
    mb.post(NeighborMessage("A", 4, {}, {}))
    assert mb.read("C", "A", 5) is None
    mb.deliver()
    assert mb.read("C", "A", 5).slot == 4
    with pytest.raises(ValueError):
        mb.read("C", "A", 4)


def test_mailbox_counts_stale_reuse():
    mb = Mailbox()
    mb.post(NeighborMessage("A", 1, {}, {}))
    mb.deliver()
    mb.deliver()  # A sent nothing this round
    assert mb.read("C", "A", 3).slot == 1
    assert mb.stale == {"C": 1}


def test_round_zero_uniform_everywhere():
    g = build_network(GridSpec(2, 2))
    mb = Mailbox()
    for node in g.intersections:
        local = {lk: 0 for lk in g.incoming(node)}
        wv, pw, eff, msg = sp_round(node, 0, local, mb, g)
        assert wv.values == pytest.approx((1 / len(wv.values),) * len(wv.values))
        assert pw == pytest.approx((0.5, 0.5))
        assert msg.slot == 0


def test_isolated_node_matches_local_weights():
    g = build_network(GridSpec(1, 1))
    mb = Mailbox()
    local = {lk: k for k, lk in enumerate(g.incoming("r0c0"))}
    for t in range(3):
        wv, _, _, _ = sp_round("r0c0", t, local, mb, g)
        mb.deliver()
        assert wv == local_weights(local, "r0c0")


def test_stationary_queues_weights_converge():
    g = build_network(GridSpec(2, 2))
    rng = np.random.default_rng(0)
    queues = {lk: int(rng.integers(0, 6)) for lk in g.links}
    mb = Mailbox()
    prev = None
    residual = []
    for t in range(40):
        cur = {}
        for node in g.intersections:
            local = {lk: queues[lk] for lk in g.incoming(node)}
            wv, _, _, _ = sp_round(node, t, local, mb, g)
            cur.update(wv.as_dict())
        mb.deliver()
        if prev is not None:
            residual.append(max(abs(cur[k] - prev[k]) for k in cur))
        prev = cur
    assert residual[-1] < 1e-12
    assert residual[-1] < residual[0]


def test_equal_queues_reduce_to_unweighted_schedule():
    rng = np.random.default_rng(5)
    for _ in range(50):
        clusters = []
        for p in range(2):
            arrs = sorted(int(a) for a in rng.integers(0, 30, size=int(rng.integers(0, 4))))
            clusters.append(tuple(Cluster(int(s), a, a + int(s)) for a, s in
                                  zip(arrs, rng.integers(1, 6, size=len(arrs)))))
        q = float(rng.integers(0, 40))
        w = local_weights({("a", "x"): q, ("b", "x"): q})
        pw = phase_weights(w, [Phase("P", (("a", "x"),)), Phase("Q", (("b", "x"),))])
        base = SchedulingInstance(tuple(clusters), changeover=3, min_green=2, max_green=None)
        weighted = SchedulingInstance(tuple(clusters), changeover=3, min_green=2, max_green=None,
                                      weights=pw)
        assert plan_schedule(base).phases == plan_schedule(weighted).phases


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=8),
       st.floats(0.05, 50))
def test_softmax_normalized_and_positive(q, temp):
    w = softmax(q, temp)
    assert abs(w.sum() - 1.0) <= 1e-9
    assert np.all(w > 0)


@settings(max_examples=200, deadline=None)
@given(q=st.lists(st.floats(0, 500, allow_nan=False), min_size=2, max_size=8),
       k=st.integers(0, 7), bump=st.floats(0.01, 50, allow_nan=False))
def test_softmax_monotone_even_when_saturated(q, k, bump):
    # far apart queues can saturate doubles, so only the weak ordering is checked here
    k %= len(q)
    w = softmax(q)
    q2 = list(q)
    q2[k] += bump
    w2 = softmax(q2)
    assert w2[k] >= w[k]
    assert all(w2[j] <= w[j] for j in range(len(q)) if j != k)
