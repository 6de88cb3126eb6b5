"""Range queries evaluated with zonemap pruning, plus per-partition utilization stats."""

from dataclasses import dataclass, field

import numpy as np

from ._validation import SchemaError, UsageError, check_column
from .table import BYTES_PER_VALUE


@dataclass(frozen=True)
class RangeQuery:
    """Conjunction of closed per-column ranges ``lo <= row[col] <= hi``.

    ``projection`` lists the columns a query outputs; the bytes it reads cover
    ``projection | predicate columns``. An empty projection means all columns.
    """

    predicates: tuple
    projection: frozenset = frozenset()
    batch_index: int = 0
    label: str = ""

    def __post_init__(self):
        preds = tuple((int(c), int(lo), int(hi)) for c, lo, hi in self.predicates)
        if not preds:
            raise SchemaError("a range query needs at least one predicate")
        cols = [c for c, _, _ in preds]
        if len(set(cols)) != len(cols):
            raise SchemaError(f"at most one predicate per column, got columns {cols}")
        for c, lo, hi in preds:
            if lo > hi:
                raise SchemaError(f"predicate on column {c} has lo={lo} > hi={hi}")
        object.__setattr__(self, "predicates", preds)
        object.__setattr__(self, "projection", frozenset(int(c) for c in self.projection))

    @property
    def columns(self):
        return tuple(c for c, _, _ in self.predicates)

    def bounds(self, column):
        for c, lo, hi in self.predicates:
            if c == column:
                return lo, hi
        return None

    def read_columns(self, n_columns):
        if not self.projection:
            return n_columns
        return len(self.projection | set(self.columns))

    def validate(self, n_columns):
        for c in self.columns:
            check_column(c, n_columns)
        for c in self.projection:
            check_column(c, n_columns)
        return self

    def matches(self, rows):
        """Boolean mask of rows (``(N, d)`` array) satisfying every predicate."""
        mask = np.ones(rows.shape[0], dtype=bool)
        for c, lo, hi in self.predicates:
            col = rows[:, c]
            mask &= (col >= lo) & (col <= hi)
        return mask

    def to_dict(self):
        return {
            "predicates": [list(p) for p in self.predicates],
            "projection": sorted(self.projection),
            "batch": self.batch_index,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(tuple(p) for p in d["predicates"]), frozenset(d.get("projection", ())),
                   d.get("batch", 0), d.get("label", ""))


@dataclass
class QueryStats:
    """What one query execution read and how well each scanned partition was used."""

    scanned_ids: np.ndarray
    utilization: np.ndarray
    sizes_read: np.ndarray
    total_partitions: int
    bytes_read: int
    bytes_matched: int
    matched_rows: int
    cost_units: float
    columns_read: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def pruned_count(self):
        return self.total_partitions - len(self.scanned_ids)

    @property
    def pruning_rate(self):
        if self.total_partitions == 0:
            return 1.0
        return self.pruned_count / self.total_partitions

    @property
    def per_partition_utilization(self):
        return list(zip(self.scanned_ids.tolist(), self.utilization.tolist()))


def _scan_mask(snapshot, query):
    query.validate(snapshot.n_columns)
    mask = np.ones(snapshot.n_partitions, dtype=bool)
    for c, lo, hi in query.predicates:
        mask &= (snapshot.mins[:, c] <= hi) & (snapshot.maxs[:, c] >= lo)
    return mask


def prune(snapshot, query):
    """Ids of partitions whose zonemap intersects every predicate, ascending."""
    return snapshot.ids[_scan_mask(snapshot, query)]


def full_scan_oracle(snapshot, query):
    """Filter every row of every partition, ignoring zonemaps."""
    rows = np.concatenate([p.rows for p in snapshot.parts]) if snapshot.n_partitions else \
        np.empty((0, snapshot.n_columns), dtype=np.int64)
    return rows[query.matches(rows)]


def execute(snapshot, query, partition_overhead=0, return_rows=True):
    """Run ``query`` against ``snapshot`` and return ``(rows, QueryStats)``.

    Bytes are counted over the projected column set only. ``cost_units`` equals
    ``bytes_read`` plus ``partition_overhead`` per scanned partition.
    """
    scan = _scan_mask(snapshot, query)
    width = query.read_columns(snapshot.n_columns) * BYTES_PER_VALUE
    scanned_ids = snapshot.ids[scan]
    n_scanned = len(scanned_ids)
    if n_scanned == 0:
        empty = np.empty(0)
        rows = np.empty((0, snapshot.n_columns), dtype=np.int64) if return_rows else None
        stats = QueryStats(scanned_ids, empty, empty, snapshot.n_partitions, 0, 0, 0, 0.0,
                           width // BYTES_PER_VALUE)
        return rows, stats
    view = snapshot.row_view()
    match = np.ones(view.n_rows, dtype=bool)
    for c, lo, hi in query.predicates:
        col = view.cols[c]
        match &= (col >= lo) & (col <= hi)
    per_part = np.add.reduceat(match.astype(np.int64), view.offsets) if snapshot.n_partitions else match
    counts = snapshot.counts[scan]
    matched = per_part[scan]
    # pruning soundness: a pruned partition can never hold a matching row
    assert per_part[~scan].sum() == 0
    sizes = counts * width
    bytes_read = int(sizes.sum())
    matched_rows = int(matched.sum())
    stats = QueryStats(
        scanned_ids=scanned_ids,
        utilization=matched / counts,
        sizes_read=sizes.astype(float),
        total_partitions=snapshot.n_partitions,
        bytes_read=bytes_read,
        bytes_matched=matched_rows * width,
        matched_rows=matched_rows,
        cost_units=float(bytes_read + partition_overhead * n_scanned),
        columns_read=width // BYTES_PER_VALUE,
    )
    rows = view.rows(match) if return_rows else None
    return rows, stats


def utilization(partition, query):
    """Fraction of ``partition``'s rows that ``query`` actually needs."""
    for c, lo, hi in query.predicates:
        if partition.mins[c] > hi or partition.maxs[c] < lo:
            raise UsageError(f"partition {partition.id} is pruned by the query; utilization undefined")
    return float(query.matches(partition.rows).sum()) / partition.n_rows
