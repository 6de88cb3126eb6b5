"""Micro-partitioned table: immutable partitions with zonemaps, snapshot chain and GC.

A table is a registry of immutable :class:`MicroPartition` objects plus a chain of
:class:`TableSnapshot` versions. Every mutation (ingestion or reclustering)
publishes a new snapshot; old snapshots stay readable until garbage collected.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import IntegrityError, SchemaError, UsageError, check_rows, same_multiset

BYTES_PER_VALUE = 8
DEFAULT_CAPACITY = 1000


@dataclass(frozen=True)
class Layout:
    """How the rows of a partition were arranged when it was written."""

    kind: str = "natural"  # natural | sorted | hilbert | qdtree
    columns: tuple = ()
    leaf: int = -1

    def __str__(self):
        if self.kind == "sorted":
            return f"Sorted({self.columns[0]})"
        if self.kind == "hilbert":
            return "Hilbert(" + ",".join(map(str, self.columns)) + ")"
        if self.kind == "qdtree":
            return f"QdTreeLeaf({self.leaf})"
        return "Natural"


NATURAL = Layout()


def sorted_layout(column):
    return Layout("sorted", (int(column),))


class MicroPartition:
    """Fixed-capacity, immutable row container with a per-column min/max zonemap."""

    __slots__ = ("id", "rows", "mins", "maxs", "created_at", "layout")

    def __init__(self, pid, rows, mins, maxs, created_at=0, layout=NATURAL):
        self.id = pid
        self.rows = rows
        self.mins = mins
        self.maxs = maxs
        self.created_at = created_at
        self.layout = layout

    @property
    def n_rows(self):
        return self.rows.shape[0]

    @property
    def zonemap(self):
        return list(zip(self.mins.tolist(), self.maxs.tolist()))

    def nbytes(self, n_columns=None):
        width = self.rows.shape[1] if n_columns is None else n_columns
        return self.n_rows * width * BYTES_PER_VALUE

    def __repr__(self):
        return f"MicroPartition(id={self.id}, rows={self.n_rows}, layout={self.layout})"


class RowView:
    """Column-major concatenation of a snapshot's rows, for vectorized scans."""

    def __init__(self, parts, n_columns):
        if len(parts):
            rows = np.concatenate([p.rows for p in parts])
        else:
            rows = np.empty((0, n_columns), dtype=np.int64)
        self.cols = np.ascontiguousarray(rows.T)
        counts = np.fromiter((p.n_rows for p in parts), dtype=np.int64, count=len(parts))
        self.offsets = np.zeros(len(parts), dtype=np.int64)
        if len(parts) > 1:
            np.cumsum(counts[:-1], out=self.offsets[1:])
        self.n_rows = rows.shape[0]

    def rows(self, mask=None):
        if mask is None:
            return self.cols.T.copy()
        return self.cols[:, mask].T.copy()

    @classmethod
    def _from_cols(cls, cols, counts):
        view = cls.__new__(cls)
        view.cols = cols
        view.offsets = np.zeros(len(counts), dtype=np.int64)
        if len(counts) > 1:
            np.cumsum(counts[:-1], out=view.offsets[1:])
        view.n_rows = cols.shape[1]
        return view

    def derive(self, counts, keep, added):
        """View of the kept partitions (``keep`` mask over ``counts``) followed by ``added``."""
        row_keep = np.repeat(keep, counts)
        parts = [self.cols[:, row_keep]] + [np.ascontiguousarray(p.rows.T) for p in added]
        new_counts = np.concatenate([counts[keep], np.array([p.n_rows for p in added], dtype=np.int64)])
        return RowView._from_cols(np.concatenate(parts, axis=1), new_counts)


class TableSnapshot:
    """One immutable table version: an ordered partition list plus stacked zonemaps.

    Partitions are kept in ascending id order; since ids are allocated
    monotonically and new partitions are always appended, that order is free.
    ``live_refs`` counts in-flight readers and is the only mutable field.
    """

    def __init__(self, snapshot_id, parent_id, parts, n_columns, mins=None, maxs=None, counts=None):
        self.snapshot_id = snapshot_id
        self.parent_id = parent_id
        self.parts = parts
        self.n_columns = n_columns
        n = len(parts)
        self.ids = np.fromiter((p.id for p in parts), dtype=np.int64, count=n)
        if mins is None:
            if n:
                mins = np.stack([p.mins for p in parts])
                maxs = np.stack([p.maxs for p in parts])
            else:
                mins = np.empty((0, n_columns), dtype=np.int64)
                maxs = np.empty((0, n_columns), dtype=np.int64)
            counts = np.fromiter((p.n_rows for p in parts), dtype=np.int64, count=n)
        self.mins = mins
        self.maxs = maxs
        self.counts = counts
        self.live_refs = 0
        self._view = None
        self._view_src = None

    @property
    def partition_ids(self):
        return self.ids.tolist()

    @property
    def n_partitions(self):
        return len(self.parts)

    @property
    def n_rows(self):
        return int(self.counts.sum())

    def row_view(self):
        if self._view is None:
            src = self._view_src
            if src is not None:
                self._view = src[0]._view.derive(src[0].counts, src[1], src[2])
            else:
                self._view = RowView(self.parts, self.n_columns)
            self._view_src = None
        return self._view

    def positions(self, ids):
        """Positions of ``ids`` within this snapshot; raises if any id is absent."""
        ids = np.asarray(ids, dtype=np.int64)
        pos = np.searchsorted(self.ids, ids)
        pos = np.minimum(pos, max(len(self.ids) - 1, 0))
        if len(ids) and (len(self.ids) == 0 or not np.array_equal(self.ids[pos], ids)):
            missing = sorted(set(ids.tolist()) - set(self.ids.tolist()))
            raise UsageError(f"partitions {missing[:5]} are not in snapshot {self.snapshot_id}")
        return pos

    def partition(self, pid):
        return self.parts[int(self.positions([pid])[0])]

    def rows(self):
        return self.row_view().rows()

    def derive(self, snapshot_id, keep, added):
        """New snapshot with ``keep``-masked partitions of this one plus ``added``."""
        parts = np.concatenate([self.parts[keep], _object_array(added)])
        if added:
            amins = np.stack([p.mins for p in added])
            amaxs = np.stack([p.maxs for p in added])
            acounts = np.fromiter((p.n_rows for p in added), dtype=np.int64, count=len(added))
        else:
            amins = amaxs = np.empty((0, self.n_columns), dtype=np.int64)
            acounts = np.empty(0, dtype=np.int64)
        snap = TableSnapshot(
            snapshot_id, self.snapshot_id, parts, self.n_columns,
            mins=np.concatenate([self.mins[keep], amins]),
            maxs=np.concatenate([self.maxs[keep], amaxs]),
            counts=np.concatenate([self.counts[keep], acounts]),
        )
        # lets the new snapshot build its row view from this one without touching every partition
        if self._view is not None:
            snap._view_src = (self, keep, list(added))
        return snap

    def __repr__(self):
        return (f"TableSnapshot(id={self.snapshot_id}, parent={self.parent_id}, "
                f"partitions={self.n_partitions}, live_refs={self.live_refs})")


def _object_array(items):
    arr = np.empty(len(items), dtype=object)
    for i, item in enumerate(items):
        arr[i] = item
    return arr


class Table:
    """Owns the partition registry and the snapshot chain of one simulated table.

    Parameters
    ----------
    n_columns : int
        Number of integer columns ``d``; every row has exactly ``d`` values.
    capacity : int
        Partition capacity ``m`` in rows.
    verify : bool
        Check row-multiset preservation on every publish (reclustering integrity).
    """

    def __init__(self, n_columns, capacity=DEFAULT_CAPACITY, verify=True):
        if n_columns < 1:
            raise SchemaError("a table needs at least one column")
        if capacity < 1:
            raise ValueError("partition capacity must be >= 1")
        self.n_columns = int(n_columns)
        self.capacity = int(capacity)
        self.verify = verify
        self.byte_width = self.n_columns * BYTES_PER_VALUE
        self.partitions = {}
        self.rows_written = 0
        self._next_pid = 0
        root = TableSnapshot(0, None, _object_array([]), self.n_columns)
        self.snapshots = {0: root}
        self.newest = root

    # -- partition construction -------------------------------------------------

    def pack(self, rows, created_at=0, layout=NATURAL, bounds=None):
        """Slice ``rows`` (already in target order) into partitions of at most ``m`` rows.

        ``bounds`` optionally lists group end offsets; packing restarts at each group
        so partitions never straddle two groups (used for Qd-tree leaves); ``layout``
        may then be a list with one entry per group.
        """
        rows = check_rows(rows, self.n_columns, allow_empty=True)
        rows.setflags(write=False)
        if bounds is None:
            bounds = [rows.shape[0]]
        layouts = layout if isinstance(layout, (list, tuple)) else [layout] * len(bounds)
        out = []
        start = 0
        for end, lay in zip(bounds, layouts):
            out.extend(self._pack_run(rows, start, end, created_at, lay))
            start = end
        return out

    def _pack_run(self, rows, start, end, created_at, layout):
        m = self.capacity
        n = end - start
        if n <= 0:
            return []
        full = n // m
        out = []
        if full:
            block = rows[start:start + full * m].reshape(full, m, self.n_columns)
            mins = block.min(axis=1)
            maxs = block.max(axis=1)
            for i in range(full):
                lo = start + i * m
                out.append(self._new_partition(rows[lo:lo + m], mins[i], maxs[i], created_at, layout))
        if n % m:
            tail = rows[start + full * m:end]
            out.append(self._new_partition(tail, tail.min(axis=0), tail.max(axis=0), created_at, layout))
        return out

    def _new_partition(self, rows, mins, maxs, created_at, layout):
        pid = self._next_pid
        self._next_pid += 1
        return MicroPartition(pid, rows, mins, maxs, created_at, layout)

    # -- mutations ---------------------------------------------------------------

    def ingest_batch(self, rows, snapshot=None, batch=0):
        """Slice ``rows`` in arrival order into partitions and publish them."""
        rows = check_rows(rows, self.n_columns)
        added = self.pack(rows, created_at=batch)
        return self.publish_snapshot(snapshot or self.newest, (), added, check_content=False)

    def publish_snapshot(self, base, removed, added, check_content=True):
        """Publish ``(base - removed) + added`` as the newest snapshot.

        Reclustering runs concurrently with ingestion in the real system, so when
        ``base`` is no longer the newest snapshot the change is rebased onto the
        newest one; ``removed`` must still be present there.
        """
        head = self.newest
        if base is not head and base.snapshot_id not in self.snapshots:
            raise UsageError(f"snapshot {base.snapshot_id} has been garbage collected")
        removed = np.unique(np.asarray(list(removed), dtype=np.int64))
        pos = base.positions(removed)
        if base is not head:
            pos = head.positions(removed)
        keep = np.ones(head.n_partitions, dtype=bool)
        keep[pos] = False
        for p in added:
            if not 1 <= p.n_rows <= self.capacity:
                raise IntegrityError(f"partition {p.id} holds {p.n_rows} rows (capacity {self.capacity})")
        if check_content and self.verify:
            old_parts = head.parts[pos]
            old = np.concatenate([p.rows for p in old_parts]) if len(old_parts) else np.empty((0, self.n_columns), np.int64)
            new = np.concatenate([p.rows for p in added]) if added else np.empty((0, self.n_columns), np.int64)
            if not same_multiset(old, new):
                raise IntegrityError(
                    f"reclustering changed content: {old.shape[0]} rows removed, {new.shape[0]} added")
        snap = head.derive(max(self.snapshots) + 1, keep, list(added))
        for p in added:
            self.partitions[p.id] = p
        self.snapshots[snap.snapshot_id] = snap
        self.newest = snap
        return snap

    def rewrite(self, ids, order_key, layout, batch=0, snapshot=None, bounds_from_key=False):
        """Replace partitions ``ids`` by their rows re-packed in ``order_key`` order.

        ``order_key(rows)`` returns the primary sort key for each row; ties are
        broken by the full row in lexicographic order so the output is
        deterministic. With ``bounds_from_key`` every distinct key value is packed
        separately and ``layout(key_value)`` gives each group's layout (Qd-tree leaves).
        Returns ``(snapshot, added partitions, rows rewritten)``.
        """
        snap = snapshot or self.newest
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) == 0:
            return snap, [], 0
        parts = snap.parts[snap.positions(ids)]
        rows = np.concatenate([p.rows for p in parts])
        key = np.asarray(order_key(rows))
        order = np.lexsort(tuple(rows.T[::-1]) + (key,))
        rows = rows[order]
        bounds = None
        if bounds_from_key:
            skey = key[order]
            bounds = (np.flatnonzero(np.diff(skey)) + 1).tolist() + [len(skey)]
            layout = [layout(int(skey[b - 1])) for b in bounds]
        added = self.pack(rows, created_at=batch, layout=layout, bounds=bounds)
        new = self.publish_snapshot(snap, ids.tolist(), added)
        self.rows_written += rows.shape[0]
        return new, added, rows.shape[0]

    # -- readers and garbage collection -----------------------------------------

    def acquire(self, snapshot=None):
        snap = snapshot or self.newest
        snap.live_refs += 1
        return snap

    def release(self, snapshot):
        if snapshot.live_refs <= 0:
            raise UsageError(f"snapshot {snapshot.snapshot_id} has no live readers")
        snapshot.live_refs -= 1

    def gc_snapshots(self):
        """Drop unreferenced old snapshots and reclaim partitions only they referenced."""
        keep = {sid: s for sid, s in self.snapshots.items()
                if s is self.newest or s.live_refs > 0}
        live = set()
        for s in keep.values():
            live.update(s.ids.tolist())
        reclaimed = set(self.partitions) - live
        for pid in reclaimed:
            del self.partitions[pid]
        self.snapshots = keep
        return reclaimed

    def rows(self, snapshot=None):
        return (snapshot or self.newest).rows()

    def __repr__(self):
        return (f"Table(columns={self.n_columns}, capacity={self.capacity}, "
                f"newest={self.newest.snapshot_id}, partitions={self.newest.n_partitions})")
