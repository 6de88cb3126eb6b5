import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reclusterkit import IntegrityError, SchemaError, Table, UsageError
from reclusterkit._validation import same_multiset

from conftest import make_table


def test_ingest_splits_by_capacity():
    t = make_table(np.arange(20).reshape(10, 2), capacity=4)
    assert t.newest.counts.tolist() == [4, 4, 2]


def test_single_partition_zonemap_is_columnwise_extremes():
    rows = np.array([[3, 9], [1, 7], [5, 8], [2, 6]])
    t = make_table(rows, capacity=4)
    snap = t.newest
    assert snap.n_partitions == 1
    assert snap.mins[0].tolist() == [1, 6]
    assert snap.maxs[0].tolist() == [5, 9]


def test_default_capacity_large_batch(rng):
    rows = rng.integers(0, 10**6, (2500, 3))
    t = Table(3)
    t.ingest_batch(rows)
    assert t.newest.counts.tolist() == [1000, 1000, 500]
    assert same_multiset(t.rows(), rows)


def test_noop_publish_gets_new_id():
    t = make_table(np.arange(8).reshape(8, 1))
    before = t.newest
    after = t.publish_snapshot(before, [], [])
    assert after.snapshot_id > before.snapshot_id
    assert same_multiset(after.rows(), before.rows())


def test_publish_accepts_resorted_content():
    rows = np.array([[9], [1], [5], [7], [3], [8], [2], [6], [4], [0], [11], [10]])
    t = make_table(rows, capacity=4)
    snap = t.newest
    ids = snap.ids.tolist()
    added = t.pack(np.sort(rows, axis=0))
    new = t.publish_snapshot(snap, ids, added)
    assert new.n_partitions == 3
    assert new.mins[:, 0].tolist() == [0, 4, 8]


def test_publish_rejects_changed_content():
    rows = np.arange(12).reshape(12, 1)
    t = make_table(rows, capacity=4)
    bad = rows.copy()
    bad[5, 0] += 1
    with pytest.raises(IntegrityError):
        t.publish_snapshot(t.newest, t.newest.ids.tolist(), t.pack(bad))


def test_partition_over_capacity_rejected():
    t = make_table(np.arange(4).reshape(4, 1), capacity=4)
    big = t._new_partition(np.arange(5).reshape(5, 1), np.array([0]), np.array([4]), 0, t.newest.parts[0].layout)
    with pytest.raises(IntegrityError):
        t.publish_snapshot(t.newest, [], [big])


def test_gc_keeps_newest():
    t = make_table(np.arange(8).reshape(8, 1))
    t.gc_snapshots()
    assert t.gc_snapshots() == set()
    assert t.newest.n_partitions == 2


def test_gc_reclaims_unreachable_partition():
    t = make_table(np.arange(8).reshape(8, 1))
    a = t.newest
    old = a.ids[0]
    t.rewrite([old], lambda r: -r[:, 0], a.parts[0].layout)
    reclaimed = t.gc_snapshots()
    assert old in reclaimed
    assert a.snapshot_id not in t.snapshots


def test_gc_respects_live_reader():
    t = make_table(np.arange(8).reshape(8, 1))
    a = t.acquire()
    t.rewrite([a.ids[0]], lambda r: -r[:, 0], a.parts[0].layout)
    assert t.gc_snapshots() == set()
    t.release(a)
    assert len(t.gc_snapshots()) == 1


def test_release_without_acquire():
    t = make_table(np.arange(4).reshape(4, 1))
    with pytest.raises(UsageError):
        t.release(t.newest)


def test_schema_checks():
    t = Table(2, 4)
    with pytest.raises(SchemaError):
        t.ingest_batch(np.zeros((3, 3), dtype=np.int64))
    with pytest.raises(SchemaError):
        Table(0)


def test_snapshot_ids_increase_and_rows_written():
    t = make_table(np.arange(16).reshape(16, 1))
    ids = [t.newest.snapshot_id]
    t.rewrite(t.newest.ids[:2], lambda r: -r[:, 0], t.newest.parts[0].layout)
    ids.append(t.newest.snapshot_id)
    t.ingest_batch(np.arange(3).reshape(3, 1))
    ids.append(t.newest.snapshot_id)
    assert ids == sorted(set(ids))
    assert t.rows_written == 8


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(-50, 50), min_size=2, max_size=2), min_size=1, max_size=60),
       st.integers(1, 7), st.data())
def test_zonemaps_tight_and_content_kept(rows, cap, data):
    rows = np.array(rows, dtype=np.int64)
    t = make_table(rows, capacity=cap)
    n = t.newest.n_partitions
    pick = data.draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=n, unique=True))
    t.rewrite(t.newest.ids[pick], lambda r: r[:, 1], t.newest.parts[0].layout)
    snap = t.newest
    for p, lo, hi in zip(snap.parts, snap.mins, snap.maxs):
        assert 1 <= p.n_rows <= cap
        assert (p.rows.min(axis=0) == lo).all() and (p.rows.max(axis=0) == hi).all()
    assert same_multiset(snap.rows(), rows)
    # the incremental row view agrees with the partitions it was derived from
    view = snap.row_view()
    assert np.array_equal(view.rows(), np.concatenate([p.rows for p in snap.parts]))
