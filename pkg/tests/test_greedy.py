import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reclusterkit import RangeQuery, execute
from reclusterkit._validation import same_multiset
from reclusterkit.baselines import partition_max_depth
from reclusterkit.greedy import (AdjustedGreedy, AuditTrace, PotentialAudit, ReclusterEvent, audit_trace,
                                 chunk_boundaries, find_boundaries, greedy_query_step, random_trace,
                                 recluster_set, truncate_to_budget, adversarial_pool_trace)
from reclusterkit.table import Table

from conftest import table_from_ranges


def test_find_boundaries_stabbing():
    t = table_from_ranges([(1, 5), (4, 9), (10, 12)])
    ids = t.newest.ids
    assert find_boundaries(t.newest, 0, 6).partition_ids.tolist() == [ids[1]]
    assert find_boundaries(t.newest, 0, 11).partition_ids.tolist() == [ids[2]]
    assert find_boundaries(t.newest, 0, 4).partition_ids.tolist() == [ids[0], ids[1]]


def test_degenerate_range_skipped():
    t = table_from_ranges([(7, 7)])
    assert len(find_boundaries(t.newest, 0, 7)) == 0


def test_recluster_three_stacked_partitions():
    keys = np.arange(24).reshape(8, 3).T  # every partition spans nearly the whole key range
    t = Table(1, 8)
    for k in keys:
        t.ingest_batch(k.reshape(-1, 1))
    assert partition_max_depth(t.newest, 0).max() == 3
    snap, _ = recluster_set(t, 0, t.newest.ids)
    assert partition_max_depth(snap, 0).max() == 1


def test_recluster_single_sorted_partition():
    t = table_from_ranges([(0, 30)])
    before = t.newest.rows()
    snap, _ = recluster_set(t, 0, t.newest.ids)
    assert snap.n_partitions == 1
    assert np.array_equal(snap.rows(), before)


def test_recluster_cost_and_output_count():
    k, m = 5, 8
    t = table_from_ranges([(0, 99)] * k, rows_per=m, column_count=2)
    snap, cost = recluster_set(t, 0, t.newest.ids)
    assert snap.n_partitions == k
    assert cost == 2 * k * m * t.byte_width


def test_query_without_boundaries_is_free():
    t = table_from_ranges([(0, 9), (10, 19), (20, 29)])
    before = t.newest.snapshot_id
    snap, cost = greedy_query_step(t, RangeQuery(((0, -5, 40),)), 0)
    assert cost == 0 and snap.snapshot_id == before


def test_both_ends_in_one_partition_reclustered_once():
    t = table_from_ranges([(0, 99), (200, 299)], rows_per=8)
    log = []
    greedy_query_step(t, RangeQuery(((0, 20, 40),)), 0, log=log)
    assert len(log) == 1 and log[0].k == 1


def test_pool_then_repeat_query():
    k = 12
    t = table_from_ranges([(0, 1000)] * k, rows_per=8)
    q = RangeQuery(((0, 300, 600),))
    log = []
    greedy_query_step(t, q, 0, log=log)
    assert sum(ev.k for ev in log) == k
    log2 = []
    greedy_query_step(t, q, 0, log=log2)
    assert sum(ev.k for ev in log2) <= 2


def test_potential_values():
    pot = PotentialAudit([10, 20, 30, 40, 50, 60, 70, 80])
    assert pot.phi(10, 80) == pytest.approx(16.0)
    assert pot.phi(33, 33) == 0.0
    assert pot.phi(31, 39) == 0.0  # no boundary rank inside
    assert pot.rescale([5, 10, 15]).tolist() == [0.5, 1.0, 1.5]


def test_empty_event_has_zero_delta():
    pot = PotentialAudit([1, 2, 3])
    e = np.empty(0)
    ev = ReclusterEvent(None, 0, np.empty(0, np.int64), e, e, np.empty(0, np.int64), e, e, 0, 0)
    assert pot.delta(ev) == 0.0 and ev.k == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1000), min_size=1, max_size=40), st.integers(0, 1000), st.integers(0, 1000))
def test_potential_bounds(values, a, b):
    a, b = min(a, b), max(a, b)
    pot = PotentialAudit(values)
    q = math.ceil(len(values) / 2)
    phi = float(pot.phi(a, b))
    assert 0 <= phi <= 4 + 4 * math.log2(max(2 * q, 1)) + 1e-9


def test_chunking_sizes():
    ids = np.arange(10)
    chunks = chunk_boundaries(ids, np.arange(10)[::-1], 4)
    assert [len(c) for c in chunks] == [4, 4, 2]
    assert np.concatenate(chunks).tolist() == list(range(9, -1, -1))


def test_warm_start_truncation():
    m = 10
    ids = np.arange(80)
    mins = np.zeros(80, dtype=np.int64)
    maxs = 100 + ids
    counts = np.full(80, m)
    keep = truncate_to_budget(ids, mins, maxs, 50, counts, remaining=100, m=m)
    assert len(keep) == 50
    assert keep.tolist() == list(range(50))  # nearest ranges to the anchor first


def _two_phase(t_resel):
    rng = np.random.default_rng(5)
    t = Table(2, 8)
    for _ in range(20):
        t.ingest_batch(rng.integers(0, 1000, (8, 2)))
    agent = AdjustedGreedy(key=0, t_resel=t_resel)
    for i in range(60):
        col = 0 if i < 30 else 1
        lo = int(rng.integers(0, 900))
        q = RangeQuery(((col, lo, lo + 50),))
        _, s = execute(t.newest, q, return_rows=False)
        agent.step(t, q, s, batch=i)
    return agent, t


def test_key_switches_once_between_phases():
    agent, t = _two_phase(t_resel=20)
    assert len(agent.switches) == 1
    assert agent.switches[0][1:] == (0, 1)
    assert agent.key == 1
    assert t.newest.n_rows == 160


def test_adjusted_respects_k_max_and_budget():
    rng = np.random.default_rng(2)
    trace = adversarial_pool_trace(rng, 60, 30, 16)
    rep = audit_trace(trace, "adjusted", k_max=8)
    assert rep.max_in_memory <= 8
    assert rep.warm_ok
    assert rep.lemma_violations == 0


@pytest.mark.parametrize("pattern", ["uniform", "local", "drift", "mixed"])
def test_small_traces_pass_audit(pattern):
    rng = np.random.default_rng(hash(pattern) % 1000)
    trace = random_trace(rng, 80, 60, 4, pattern)
    rep = audit_trace(trace)
    assert rep.lemma_violations == 0
    assert rep.theorem_ok
    assert rep.total_fetch >= rep.output_blocks


def test_trace_validation():
    with pytest.raises(ValueError):
        audit_trace(AuditTrace([], 4), "other")
    rep = audit_trace(AuditTrace([], 4))
    assert rep.rows == [] and rep.ok


def test_greedy_keeps_content():
    rng = np.random.default_rng(9)
    t = Table(2, 8)
    rows = []
    for i in range(30):
        r = rng.integers(0, 500, (8, 2))
        rows.append(r)
        t.ingest_batch(r)
        lo = int(rng.integers(0, 450))
        greedy_query_step(t, RangeQuery(((0, lo, lo + 40),)), 0)
    assert same_multiset(t.rows(), np.concatenate(rows))
