import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.cluster import DBSCAN

from reclusterkit import RangeQuery, Table
from reclusterkit._validation import NotFittedError, same_multiset
from reclusterkit.greedy import recluster_set
from reclusterkit.layout import (SCATTER, CosineDBSCAN, GroupKind, HilbertOrder, LayoutAssignment,
                                 QdTreeLayout, assign_layouts, compute_signatures, dbscan_cosine,
                                 hilbert_index, label_cluster, quantize, recluster_hybrid)
from reclusterkit.policy import WindowEntry
from reclusterkit.query import QueryStats


def _entry(ids, savings, columns):
    q = RangeQuery(tuple((c, 0, 1) for c in columns))
    s = QueryStats(np.asarray(ids, dtype=np.int64), np.zeros(len(ids)), np.ones(len(ids)), 10, 1, 0, 0, 1.0)
    return WindowEntry(0, q, s, np.asarray(savings, dtype=float), 1.0)


def test_signature_single_column():
    sig = compute_signatures([_entry([7], [12.0], [2])], 4)
    assert sig.s.tolist() == [[0, 0, 12, 0]]
    assert sig.s_hat.tolist() == [[0, 0, 1, 0]]


def test_signature_equal_split():
    sig = compute_signatures([_entry([7], [10.0], [0, 1])], 3)
    assert sig.s.tolist() == [[5, 5, 0]]
    assert np.allclose(sig.s_hat, [[1 / np.sqrt(2), 1 / np.sqrt(2), 0]])


def test_signature_two_queries():
    sig = compute_signatures([_entry([7], [30.0], [0]), _entry([7], [40.0], [1])], 3)
    assert sig.s.tolist() == [[30, 40, 0]]
    assert np.allclose(sig.s_hat, [[0.6, 0.8, 0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_signature_conservation(seed):
    rng = np.random.default_rng(seed)
    entries = []
    for _ in range(6):
        ids = rng.choice(10, rng.integers(1, 6), replace=False)
        cols = rng.choice(4, rng.integers(1, 4), replace=False)
        entries.append(_entry(ids, rng.uniform(0, 5, len(ids)), cols))
    sig = compute_signatures(entries, 4)
    for pid, row in zip(sig.ids, sig.s):
        total = sum(e.savings[e.stats.scanned_ids == pid].sum() for e in entries)
        assert row.sum() == pytest.approx(total)
    assert np.allclose(np.linalg.norm(sig.s_hat, axis=1), 1.0)


def test_dbscan_examples():
    same = np.tile([[0.6, 0.8, 0.0]], (5, 1))
    labels, _ = dbscan_cosine(same)
    assert set(labels) == {0}
    rng = np.random.default_rng(0)
    a = np.abs(np.eye(3)[0] + rng.normal(0, 0.02, (6, 3)))
    b = np.abs(np.eye(3)[1] + rng.normal(0, 0.02, (6, 3)))
    pts = np.vstack([a, b])
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    labels, _ = dbscan_cosine(pts, eps=0.15)
    assert len(set(labels)) == 2 and -1 not in labels
    labels, _ = dbscan_cosine(np.vstack([pts, [[0, 0, 1.0]]]), min_pts=3)
    assert labels[-1] == -1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.02, 0.5), st.integers(1, 5))
def test_dbscan_matches_sklearn(seed, eps, min_pts):
    rng = np.random.default_rng(seed)
    centers = np.abs(rng.normal(size=(3, 4)))
    pts = np.abs(centers[rng.integers(0, 3, 30)] + rng.normal(0, 0.2, (30, 4))) + 1e-3
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    ours, core = dbscan_cosine(pts, eps, min_pts)
    ref = DBSCAN(eps=eps, min_samples=min_pts, metric="cosine").fit(pts)
    assert np.array_equal(np.flatnonzero(core), ref.core_sample_indices_)
    assert np.array_equal(ours == -1, ref.labels_ == -1)
    # same partition of the clustered points (labels may be permuted; border points
    # reachable from two clusters may legitimately differ, so compare core points only)
    idx = np.flatnonzero(core)
    for i, j in itertools.combinations(idx, 2):
        assert (ours[i] == ours[j]) == (ref.labels_[i] == ref.labels_[j])


def test_estimator_wrapper():
    est = CosineDBSCAN(eps=0.1, min_pts=2)
    labels = est.fit_predict([[1, 0], [2, 0.01], [0, 3], [0.01, 1]])
    assert labels.tolist() == [0, 0, 1, 1]
    assert est.set_params(eps=0.3).get_params() == {"eps": 0.3, "min_pts": 2}
    with pytest.raises(ValueError):
        CosineDBSCAN().fit([[0, 0], [1, 0]])


def test_label_examples():
    kind, d = label_cluster(np.eye(5)[2])
    assert kind == GroupKind("single", (2,)) and str(kind) == "SingleColumn(2)" and d == pytest.approx(0)
    kind, d = label_cluster(np.array([1, 1, 0, 0]) / np.sqrt(2))
    assert kind.kind == "multi" and set(kind.columns) == {0, 1} and d == pytest.approx(0, abs=1e-12)
    kind, d = label_cluster(np.full(8, 1 / np.sqrt(8)))
    assert kind == SCATTER and str(kind) == "Scatter"
    assert d == pytest.approx(1 - np.sqrt(3 / 8))


def test_hilbert_order1():
    pts = [(0, 0), (0, 1), (1, 1), (1, 0)]
    assert hilbert_index(pts, 1).tolist() == [0, 1, 2, 3]


@pytest.mark.parametrize("dims,bits", [(2, 1), (2, 3), (3, 2)])
def test_hilbert_small_bijective_and_continuous(dims, bits):
    grid = np.array(list(itertools.product(range(1 << bits), repeat=dims)))
    h = hilbert_index(grid, bits)
    assert sorted(h.tolist()) == list(range(len(grid)))
    path = grid[np.argsort(h)]
    assert (np.abs(np.diff(path, axis=0)).sum(axis=1) == 1).all()


def test_hilbert_input_checks():
    with pytest.raises(ValueError):
        hilbert_index([(4, 0)], 2)
    with pytest.raises(ValueError):
        hilbert_index([(0, 0, 0, 0)], 16)
    with pytest.raises(ValueError):
        HilbertOrder([0])
    with pytest.raises(NotFittedError):
        HilbertOrder([0, 1]).transform(np.zeros((2, 2)))
    assert quantize([0, 5, 10], 0, 10, 2).tolist() == [0, 1, 3]
    assert quantize([7, 7], 7, 7).tolist() == [0, 0]


def test_qdtree_without_queries_is_one_leaf():
    rows = np.arange(40).reshape(20, 2)
    tree = QdTreeLayout(min_leaf=2).fit(rows)
    assert tree.n_leaves_ == 1
    assert set(tree.predict(rows)) == {0}


def _skipped(rows, c, t, lo, hi):
    left = rows[:, c] < t
    if hi < t:
        return int((~left).sum())
    if lo >= t:
        return int(left.sum())
    return 0


def test_qdtree_first_cut_skips_most():
    rows = np.arange(21).reshape(21, 1)
    q = RangeQuery(((0, 5, 10),))
    tree = QdTreeLayout(min_leaf=1, max_depth=1).fit(rows, [q])
    _, c, t, _, _ = tree.nodes_[0]
    best = max(_skipped(rows, 0, x, 5, 10) for x in (5, 11))
    assert _skipped(rows, c, t, 5, 10) == best
    assert t in (5, 11)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_qdtree_routing_partitions_rows(seed):
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, 100, (200, 3))
    qs = []
    for _ in range(5):
        lo = int(rng.integers(0, 90))
        qs.append(RangeQuery(((int(rng.integers(0, 3)), lo, lo + 10),)))
    tree = QdTreeLayout(min_leaf=10)
    leaves = tree.fit_predict(rows, qs)
    assert len(leaves) == len(rows)
    counts = np.bincount(leaves, minlength=tree.n_leaves_)
    assert counts.sum() == len(rows) and (counts >= 10).all()
    assert np.array_equal(tree.predict(rows), leaves)


def _table(rows, cap):
    t = Table(rows.shape[1], cap)
    t.ingest_batch(rows)
    return t


def test_hybrid_single_group_matches_sort():
    rng = np.random.default_rng(1)
    rows = rng.integers(0, 1000, (64, 2))
    a, b = _table(rows, 8), _table(rows, 8)
    ids = a.newest.ids
    sa, ca = recluster_hybrid(a, [LayoutAssignment(ids, GroupKind("single", (1,)))])
    sb, cb = recluster_set(b, 1, ids)
    assert ca == cb
    assert np.array_equal(sa.rows(), sb.rows())


def _area(snap, cols):
    return float(np.prod(snap.maxs[:, cols] - snap.mins[:, cols], axis=1).sum())


def _layout_snapshots(rows, cap=16):
    out = {}
    for name, kind in [("hilbert", GroupKind("multi", (0, 1))), ("c0", GroupKind("single", (0,))),
                       ("c1", GroupKind("single", (1,)))]:
        t = _table(rows, cap)
        snap, _ = recluster_hybrid(t, [LayoutAssignment(t.newest.ids, kind)])
        assert same_multiset(snap.rows(), rows)
        out[name] = snap
    return out


@pytest.mark.xfail(strict=True, reason="a single-column sort already follows a 1-D diagonal; the "
                   "curve's quadrant jumps make its bounding boxes larger")
def test_hilbert_area_sum_on_diagonal():
    rng = np.random.default_rng(7)
    x = rng.integers(0, 10_000, 512)
    rows = np.column_stack([x, x + rng.integers(-300, 300, 512)])
    snaps = _layout_snapshots(rows[rng.permutation(len(rows))])
    areas = {k: _area(s, [0, 1]) for k, s in snaps.items()}
    assert areas["hilbert"] < min(areas["c0"], areas["c1"])


def test_hilbert_balances_pruning_across_columns():
    rng = np.random.default_rng(7)
    rows = rng.integers(0, 10_000, (1024, 2))
    snaps = _layout_snapshots(rows)
    starts = rng.integers(0, 9_000, 200)

    def scanned(snap, col):
        lo = snap.mins[:, col][None, :]
        hi = snap.maxs[:, col][None, :]
        return ((lo <= starts[:, None] + 999) & (hi >= starts[:, None])).mean()

    worst = {k: max(scanned(s, 0), scanned(s, 1)) for k, s in snaps.items()}
    assert worst["hilbert"] < min(worst["c0"], worst["c1"])


def test_hybrid_empty_assignment():
    t = _table(np.arange(16).reshape(8, 2), 4)
    before = t.newest
    snap, cost = recluster_hybrid(t, [])
    assert snap is before and cost == 0


def test_assign_layouts_groups_and_logs():
    # 6 partitions dominated by column 0, 6 by column 2, one mixed partition
    s = np.vstack([np.tile([10.0, 0.2, 0, 0], (6, 1)), np.tile([0, 0, 8.0, 0.1], (6, 1)),
                   [[1.0, 1.0, 1.0, 1.0]]])
    from reclusterkit.layout import Signatures
    groups = assign_layouts(Signatures(np.arange(13), s))
    kinds = {str(g.kind): g.group.tolist() for g in groups}
    assert kinds["SingleColumn(0)"] == list(range(6))
    assert kinds["SingleColumn(2)"] == list(range(6, 12))
    assert kinds["Scatter"] == [12]
    assert sorted(np.concatenate([g.group for g in groups]).tolist()) == list(range(13))
    assert assign_layouts(Signatures(np.empty(0, np.int64), np.empty((0, 4)))) == []
