"""Overlap metrics and the comparison reclustering policies.

Every policy implements the same three hooks called by the simulation loop:
``before_queries`` (after ingestion), ``on_query`` (after each query) and
``after_batch``. Each hook returns the recluster cost it spent.
"""

from dataclasses import dataclass

import numpy as np

from .greedy import AdjustedGreedy, greedy_query_step
from .layout import HilbertOrder, QdTreeLayout, SortLayout
from .policy import mem_limit_for, sort_cost
from .table import Layout


# -- overlap metrics ------------------------------------------------------------------

def overlap_depth(snapshot, column, x):
    """Number of partitions whose range on ``column`` covers ``x``."""
    return int(np.count_nonzero((snapshot.mins[:, column] <= x) & (snapshot.maxs[:, column] >= x)))


def _depth_at(mins_sorted, maxs_sorted, points):
    return (np.searchsorted(mins_sorted, points, side="right")
            - np.searchsorted(maxs_sorted, points, side="left"))


def overlap_widths(snapshot, column):
    lo = snapshot.mins[:, column]
    hi = snapshot.maxs[:, column]
    slo, shi = np.sort(lo), np.sort(hi)
    n = len(lo)
    starts_after = n - np.searchsorted(slo, hi, side="right")
    ends_before = np.searchsorted(shi, lo, side="left")
    return n - starts_after - ends_before


class RangeMax:
    """Sparse table for O(1) range-maximum queries over a static array."""

    def __init__(self, values):
        values = np.asarray(values)
        self.levels = [values]
        span = 1
        while 2 * span <= len(values):
            prev = self.levels[-1]
            self.levels.append(np.maximum(prev[:-span], prev[span:]))
            span *= 2

    def query(self, lo, hi):
        """Max over ``values[lo:hi]`` for arrays of half-open bounds (``hi > lo``)."""
        lo = np.asarray(lo)
        hi = np.asarray(hi)
        length = hi - lo
        k = np.floor(np.log2(np.maximum(length, 1))).astype(int)
        out = np.empty(len(lo), dtype=self.levels[0].dtype)
        for lev in np.unique(k):
            sel = k == lev
            arr = self.levels[lev]
            out[sel] = np.maximum(arr[lo[sel]], arr[hi[sel] - (1 << lev)])
        return out


def partition_max_depth(snapshot, column):
    """For each partition, the maximum overlap depth anywhere inside its key range.

    Depth is piecewise constant between endpoints, so sampling the endpoints suffices.
    """
    n = snapshot.n_partitions
    if n == 0:
        return np.empty(0, dtype=np.int64)
    lo = snapshot.mins[:, column]
    hi = snapshot.maxs[:, column]
    slo, shi = np.sort(lo), np.sort(hi)
    points = np.unique(np.concatenate([lo, hi]))
    depth = _depth_at(slo, shi, points)
    a = np.searchsorted(points, lo, side="left")
    b = np.searchsorted(points, hi, side="right")
    return RangeMax(depth).query(a, b)


@dataclass
class OverlapMetrics:
    widths: np.ndarray
    endpoint_depths: np.ndarray

    @property
    def avg_width(self):
        return float(self.widths.mean()) if len(self.widths) else 0.0

    @property
    def avg_depth(self):
        return float(self.endpoint_depths.mean()) if len(self.endpoint_depths) else 0.0

    @property
    def max_depth(self):
        return int(self.endpoint_depths.max()) if len(self.endpoint_depths) else 0


def avg_metrics(snapshot, column):
    """Widths per partition and depths sampled at every partition endpoint (as a multiset)."""
    lo = snapshot.mins[:, column]
    hi = snapshot.maxs[:, column]
    points = np.concatenate([lo, hi])
    depths = _depth_at(np.sort(lo), np.sort(hi), points)
    return OverlapMetrics(overlap_widths(snapshot, column), depths)


# -- policy plumbing --------------------------------------------------------------------

def key_order(columns):
    """Sort-key estimator for an oracle key: one column sorts, more use a Hilbert curve."""
    columns = tuple(columns)
    if len(columns) == 1:
        return SortLayout(columns[0])
    return HilbertOrder(columns[:3])


def recluster_by_key(table, ids, columns, batch=0, mem_limit_rows=None):
    """Rewrite ``ids`` ordered by the key over ``columns``; returns ``(snapshot, cost)``."""
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) == 0:
        return table.newest, 0
    est = key_order(columns)
    snap, _, n_rows = table.rewrite(ids, lambda rows: est.fit_transform(rows), est.layout, batch)
    return snap, sort_cost(n_rows, table.byte_width, mem_limit_rows)


class Policy:
    """No-op reclustering policy; subclasses override the hooks they need."""

    name = "BASE"

    def before_queries(self, ctx):
        return 0

    def on_query(self, ctx, query, stats):
        return 0

    def after_batch(self, ctx):
        return 0

    def get_params(self):
        return {}


class NoRecluster(Policy):
    name = "NR"


class FullQdTree(Policy):
    """Rewrite the whole table through a Qd-tree trained on the previous period's queries."""

    name = "QD"

    def __init__(self, min_leaf=None):
        self.min_leaf = min_leaf
        self.rewrites = []

    def before_queries(self, ctx):
        if not (ctx.period_start and ctx.recluster_enabled and ctx.previous_period_queries):
            return 0
        snap = ctx.table.newest
        tree = QdTreeLayout(min_leaf=self.min_leaf or ctx.table.capacity)
        ctx.table.rewrite(snap.ids, lambda rows: tree.fit_predict(rows, ctx.previous_period_queries),
                          lambda leaf: Layout("qdtree", (), leaf), ctx.batch, snap, bounds_from_key=True)
        self.rewrites.append(ctx.batch)
        return sort_cost(snap.n_rows, ctx.table.byte_width, mem_limit_for(ctx.table))


class NewDataSorted(Policy):
    """Sort each batch's newly ingested partitions among themselves by the oracle key."""

    name = "NN"

    def before_queries(self, ctx):
        if not ctx.recluster_enabled or len(ctx.new_ids) == 0:
            return 0
        _, cost = recluster_by_key(ctx.table, ctx.new_ids, ctx.oracle_key, ctx.batch,
                                   mem_limit_for(ctx.table))
        return cost


class DepthDriven(Policy):
    """Each batch, recluster up to ``cap`` partitions whose overlap depth exceeds ``threshold``.

    Depth is measured on the first oracle-key column. Partitions are taken deepest
    first (ties by id) and sorted together by the oracle key; the step repeats on
    the remaining deep partitions until none are left or the cap is used up.
    """

    name = "DD"

    def __init__(self, threshold=4, cap=16, mem_limit_rows=None):
        if threshold < 1 or cap < 1:
            raise ValueError("threshold and cap must be >= 1")
        self.threshold = threshold
        self.cap = cap
        self.mem_limit_rows = mem_limit_rows

    def get_params(self):
        return {"threshold": self.threshold, "cap": self.cap}

    def after_batch(self, ctx):
        if not ctx.recluster_enabled:
            return 0
        table = ctx.table
        column = ctx.oracle_key[0]
        budget = self.cap
        fresh = np.empty(0, dtype=np.int64)
        total = 0
        while budget > 0:
            snap = table.newest
            depth = partition_max_depth(snap, column)
            deep = (depth > self.threshold) & ~np.isin(snap.ids, fresh)
            if not deep.any():
                break
            idx = np.flatnonzero(deep)
            idx = idx[np.lexsort((snap.ids[idx], -depth[idx]))][:budget]
            before = snap.ids
            snap, cost = recluster_by_key(table, snap.ids[idx], ctx.oracle_key, ctx.batch,
                                          mem_limit_for(table, self.mem_limit_rows))
            fresh = np.union1d(fresh, np.setdiff1d(snap.ids, before))
            budget -= len(idx)
            total += cost
        return total


class OracleSorted(Policy):
    """Fully sort the table by the oracle key before each batch's queries, free of charge."""

    name = "ORACLE-SORTED"

    def before_queries(self, ctx):
        snap = ctx.table.newest
        if snap.n_partitions:
            recluster_by_key(ctx.table, snap.ids, ctx.oracle_key, ctx.batch)
        return 0


class Greedy(Policy):
    """Boundary greedy after every query, on the first oracle-key column."""

    name = "GREEDY"

    def __init__(self, mem_limit_rows=None):
        self.mem_limit_rows = mem_limit_rows

    def on_query(self, ctx, query, stats):
        if not ctx.recluster_enabled:
            return 0
        _, cost = greedy_query_step(ctx.table, query, ctx.oracle_key[0], batch=ctx.batch,
                                    mem_limit_rows=mem_limit_for(ctx.table, self.mem_limit_rows),
                                    log=ctx.recluster_log)
        return cost


class GreedyAdjusted(Policy):
    """Adjusted greedy; the key starts at the first oracle column and is reselected from savings."""

    name = "GREEDY-ADJUSTED"

    def __init__(self, **params):
        self.params = params
        self.agent = None

    def get_params(self):
        return dict(self.params)

    def on_query(self, ctx, query, stats):
        if not ctx.recluster_enabled:
            return 0
        if self.agent is None:
            self.agent = AdjustedGreedy(key=ctx.oracle_key[0], **self.params)
        _, cost = self.agent.step(ctx.table, query, stats, ctx.batch, log=ctx.recluster_log)
        return cost
