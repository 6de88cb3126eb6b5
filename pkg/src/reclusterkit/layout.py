"""Hybrid layouts: savings signatures, cosine DBSCAN, anchor labeling, Hilbert and Qd-tree orders.

Partitions picked for reclustering are grouped by *which columns* their savings
come from. Each group then gets its own physical layout: a plain sort on one
column, a Hilbert-curve order over a few columns, or a small Qd-tree when the
savings are scattered over many columns.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from ._validation import check_is_fitted
from .policy import query_savings, sort_cost
from .table import Layout, sorted_layout

DEFAULT_EPS = 0.15
DEFAULT_MIN_PTS = 3
DEFAULT_K_TOP = 4
SCATTER_THRESHOLD = 0.2
NOISE_SINGLE_THRESHOLD = 0.9
HILBERT_BITS = 16


# -- savings signatures ---------------------------------------------------------

@dataclass
class Signatures:
    ids: np.ndarray
    s: np.ndarray

    @property
    def s_hat(self):
        norm = np.linalg.norm(self.s, axis=1, keepdims=True)
        return self.s / np.where(norm == 0, 1, norm)

    @property
    def nonzero(self):
        return self.s.sum(axis=1) > 0


def compute_signatures(window, n_columns, candidate_ids=None):
    """Per-partition savings split equally across each query's predicate columns.

    Partitions whose signature is all zero are dropped: they have nothing to attribute.
    """
    ids_parts, rows_parts = [], []
    for e in window:
        if len(e.stats.scanned_ids) == 0:
            continue
        sav = e.savings if e.savings is not None else query_savings(e.stats)
        cols = e.query.columns
        share = np.zeros((len(sav), n_columns))
        share[:, list(cols)] = (sav / len(cols))[:, None]
        ids_parts.append(e.stats.scanned_ids)
        rows_parts.append(share)
    if not ids_parts:
        return Signatures(np.empty(0, np.int64), np.empty((0, n_columns)))
    ids = np.concatenate(ids_parts)
    share = np.concatenate(rows_parts)
    uniq, inv = np.unique(ids, return_inverse=True)
    s = np.zeros((len(uniq), n_columns))
    np.add.at(s, inv, share)
    if candidate_ids is not None:
        keep = np.isin(uniq, candidate_ids)
        uniq, s = uniq[keep], s[keep]
    keep = s.sum(axis=1) > 0
    return Signatures(uniq[keep], s[keep])


# -- density clustering -------------------------------------------------------------

def dbscan_cosine(points, eps=DEFAULT_EPS, min_pts=DEFAULT_MIN_PTS):
    """DBSCAN with distance ``1 - u.v`` on unit vectors.

    Points are visited in input order, so labels are deterministic. ``min_pts``
    counts the point itself. Returns ``(labels, core_mask)``; noise is labelled -1.
    """
    X = np.asarray(points, dtype=float)
    if not 0 < eps < 2:
        raise ValueError("eps must lie in (0, 2)")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    n = len(X)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels, np.zeros(0, dtype=bool)
    dist = 1.0 - np.clip(X @ X.T, -1.0, 1.0)
    adj = dist <= eps + 1e-12
    core = adj.sum(axis=1) >= min_pts
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        frontier = [i]
        while frontier:
            j = frontier.pop()
            for k in np.flatnonzero(adj[j]):
                if labels[k] == -1:
                    labels[k] = cluster
                    if core[k]:
                        frontier.append(k)
        cluster += 1
    return labels, core


class CosineDBSCAN:
    """Estimator wrapper around :func:`dbscan_cosine`; rows of ``X`` are normalized first."""

    def __init__(self, eps=DEFAULT_EPS, min_pts=DEFAULT_MIN_PTS):
        self.eps = eps
        self.min_pts = min_pts

    def get_params(self, deep=True):
        return {"eps": self.eps, "min_pts": self.min_pts}

    def set_params(self, **params):
        for k, v in params.items():
            setattr(self, k, v)
        return self

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be 2-D")
        norm = np.linalg.norm(X, axis=1, keepdims=True)
        if np.any(norm == 0):
            raise ValueError("zero vectors have no direction")
        self.labels_, core = dbscan_cosine(X / norm, self.eps, self.min_pts)
        self.core_sample_indices_ = np.flatnonzero(core)
        return self

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


# -- anchor labeling ----------------------------------------------------------------

@dataclass(frozen=True)
class GroupKind:
    kind: str  # single | multi | scatter
    columns: tuple = ()

    def __str__(self):
        if self.kind == "single":
            return f"SingleColumn({self.columns[0]})"
        if self.kind == "multi":
            return "MultiColumn(" + ",".join(map(str, self.columns)) + ")"
        return "Scatter"


SCATTER = GroupKind("scatter")


def top_columns(overall, k_top=DEFAULT_K_TOP):
    """Columns ranked by descending overall savings (ties by id), first ``k_top`` with savings > 0."""
    overall = np.asarray(overall, dtype=float)
    order = np.lexsort((np.arange(len(overall)), -overall))
    return [int(c) for c in order[:k_top] if overall[c] > 0]


def anchors(n_columns, top):
    """Unit basis vectors plus uniform blends over 2- and 3-subsets of ``top``."""
    out = [(GroupKind("single", (i,)), np.eye(n_columns)[i]) for i in range(n_columns)]
    for size in (2, 3):
        for subset in itertools.combinations(sorted(top), size):
            v = np.zeros(n_columns)
            v[list(subset)] = 1 / np.sqrt(size)
            cols = tuple(c for c in top if c in subset)  # descending contribution
            out.append((GroupKind("multi", cols), v))
    return out


def label_cluster(centroid, overall=None, k_top=DEFAULT_K_TOP, scatter_threshold=SCATTER_THRESHOLD):
    """Nearest anchor to ``centroid`` by cosine distance; returns ``(GroupKind, distance)``.

    ``overall`` is the aggregate per-column savings used to pick and order the
    multi-column anchors; by default the centroid itself.
    """
    c = np.asarray(centroid, dtype=float)
    c = c / np.linalg.norm(c)
    overall = c if overall is None else np.asarray(overall, dtype=float)
    best, best_d = None, np.inf
    for kind, v in anchors(len(c), top_columns(overall, k_top)):
        d = 1.0 - float(c @ v)
        if d < best_d - 1e-12:
            best, best_d = kind, d
    best_d = max(best_d, 0.0)
    if best_d > scatter_threshold:
        return SCATTER, best_d
    return best, best_d


# -- Hilbert curve ------------------------------------------------------------------

def hilbert_index(coords, bits):
    """Hilbert index of integer grid points ``coords`` (shape ``(N, dims)``).

    Vectorized form of Skilling's transpose algorithm; the first coordinate is the
    most significant axis. ``dims * bits`` must fit in 63 bits.
    """
    X = np.array(coords, dtype=np.int64, copy=True)
    if X.ndim == 1:
        X = X[None, :]
    n, dims = X.shape
    if dims * bits > 63:
        raise ValueError("dims * bits must be <= 63")
    if np.any(X < 0) or np.any(X >= (1 << bits)):
        raise ValueError(f"coordinates must lie in [0, 2**{bits})")
    M = 1 << (bits - 1)
    Q = M
    while Q > 1:
        P = Q - 1
        for i in range(dims):
            hit = (X[:, i] & Q) != 0
            # invert low bits of X[0] where the bit is set, else exchange with X[i]
            X[hit, 0] ^= P
            t = (X[~hit, 0] ^ X[~hit, i]) & P
            X[~hit, 0] ^= t
            X[~hit, i] ^= t
        Q >>= 1
    for i in range(1, dims):
        X[:, i] ^= X[:, i - 1]
    t = np.zeros(n, dtype=np.int64)
    Q = M
    while Q > 1:
        hit = (X[:, dims - 1] & Q) != 0
        t[hit] ^= Q - 1
        Q >>= 1
    X ^= t[:, None]
    # interleave the transposed bits, most significant first
    h = np.zeros(n, dtype=np.int64)
    for b in range(bits - 1, -1, -1):
        for i in range(dims):
            h = (h << 1) | ((X[:, i] >> b) & 1)
    return h


def quantize(values, lo, hi, bits=HILBERT_BITS):
    """Linear min-max mapping of ``values`` onto ``[0, 2**bits - 1]``."""
    values = np.asarray(values, dtype=float)
    top = (1 << bits) - 1
    span = float(hi) - float(lo)
    if span <= 0:
        return np.zeros(values.shape, dtype=np.int64)
    q = np.floor((values - float(lo)) / span * top)
    return np.clip(q, 0, top).astype(np.int64)


class HilbertOrder:
    """Sort key over ``columns`` via a Hilbert curve on per-column quantized values."""

    def __init__(self, columns, bits=HILBERT_BITS):
        if not 2 <= len(columns) <= 3:
            raise ValueError("Hilbert ordering supports 2 or 3 columns")
        self.columns = tuple(int(c) for c in columns)
        self.bits = bits

    def fit(self, rows, y=None):
        rows = np.asarray(rows)[:, self.columns]
        self.lo_ = rows.min(axis=0)
        self.hi_ = rows.max(axis=0)
        return self

    def transform(self, rows):
        check_is_fitted(self, "lo_")
        rows = np.asarray(rows)
        grid = np.column_stack([quantize(rows[:, c], lo, hi, self.bits)
                                for c, lo, hi in zip(self.columns, self.lo_, self.hi_)])
        return hilbert_index(grid, self.bits)

    def fit_transform(self, rows, y=None):
        return self.fit(rows).transform(rows)

    @property
    def layout(self):
        return Layout("hilbert", self.columns)


class SortLayout:
    def __init__(self, column):
        self.column = int(column)

    def fit(self, rows, y=None):
        return self

    def transform(self, rows):
        return np.asarray(rows)[:, self.column]

    def fit_transform(self, rows, y=None):
        return self.transform(rows)

    @property
    def layout(self):
        return sorted_layout(self.column)


# -- Qd-tree ------------------------------------------------------------------------

class QdTreeLayout:
    """Greedy binary partitioning tree whose cuts come from query predicate boundaries.

    A cut ``(column, t)`` sends rows with ``row[column] < t`` left. Each split picks the
    cut skipping the most rows summed over the queries that reach the node (a query
    entirely on one side skips the other side), as long as both children keep at
    least ``min_leaf`` rows. Leaves are numbered depth-first, left to right.
    """

    def __init__(self, min_leaf=1000, max_depth=32):
        self.min_leaf = min_leaf
        self.max_depth = max_depth

    def get_params(self, deep=True):
        return {"min_leaf": self.min_leaf, "max_depth": self.max_depth}

    def fit(self, rows, queries=()):
        rows = np.asarray(rows)
        self.n_columns_ = rows.shape[1]
        qs = [q for q in queries]
        self.nodes_ = []
        self.n_leaves_ = 0
        self._build(rows, np.arange(len(rows)), qs, 0)
        return self

    def _new_leaf(self):
        self.nodes_.append(("leaf", self.n_leaves_))
        self.n_leaves_ += 1
        return len(self.nodes_) - 1

    def _best_cut(self, rows, idx, queries):
        n = len(idx)
        best = (0, None)
        for c in range(self.n_columns_):
            preds = [q.bounds(c) for q in queries]
            cuts = sorted({t for b in preds if b is not None for t in (b[0], b[1] + 1)})
            if not cuts:
                continue
            col = np.sort(rows[idx, c])
            n_left = np.searchsorted(col, cuts, side="left")
            for t, nl in zip(cuts, n_left):
                nr = n - nl
                if nl < self.min_leaf or nr < self.min_leaf:
                    continue
                gain = 0
                for q in queries:
                    b = q.bounds(c)
                    if b is None:
                        continue
                    if b[1] < t:
                        gain += nr
                    elif b[0] >= t:
                        gain += nl
                if gain > best[0]:
                    best = (gain, (c, t))
        return best[1]

    def _build(self, rows, idx, queries, depth):
        if len(idx) < 2 * self.min_leaf or depth >= self.max_depth or not queries:
            return self._new_leaf()
        cut = self._best_cut(rows, idx, queries)
        if cut is None:
            return self._new_leaf()
        c, t = cut
        me = len(self.nodes_)
        self.nodes_.append(None)
        go_left = rows[idx, c] < t
        lq = [q for q in queries if q.bounds(c) is None or q.bounds(c)[0] < t]
        rq = [q for q in queries if q.bounds(c) is None or q.bounds(c)[1] >= t]
        left = self._build(rows, idx[go_left], lq, depth + 1)
        right = self._build(rows, idx[~go_left], rq, depth + 1)
        self.nodes_[me] = ("split", c, t, left, right)
        return me

    def predict(self, rows):
        check_is_fitted(self, "nodes_")
        rows = np.asarray(rows)
        out = np.empty(len(rows), dtype=np.int64)
        stack = [(0, np.arange(len(rows)))]
        while stack:
            node, idx = stack.pop()
            spec = self.nodes_[node]
            if spec[0] == "leaf":
                out[idx] = spec[1]
                continue
            _, c, t, left, right = spec
            mask = rows[idx, c] < t
            stack.append((left, idx[mask]))
            stack.append((right, idx[~mask]))
        return out

    def fit_predict(self, rows, queries=()):
        return self.fit(rows, queries).predict(rows)

    @property
    def depth(self):
        def walk(i):
            spec = self.nodes_[i]
            return 0 if spec[0] == "leaf" else 1 + max(walk(spec[3]), walk(spec[4]))
        return walk(0)


# -- assignment and reclustering -------------------------------------------------------

@dataclass
class LayoutAssignment:
    group: np.ndarray
    kind: GroupKind
    anchor_distance: float = 0.0


def assign_layouts(signatures, eps=DEFAULT_EPS, min_pts=DEFAULT_MIN_PTS, k_top=DEFAULT_K_TOP,
                   scatter_threshold=SCATTER_THRESHOLD):
    """Group partitions by signature direction and label each group with a layout.

    Clusters with the same label are merged, so each kind appears at most once.
    Noise points dominated by one column (normalized share >= 0.9) join that
    column's single-column group; the other noise points join the scatter group.
    """
    if len(signatures.ids) == 0:
        return []
    s_hat = signatures.s_hat
    overall = signatures.s.sum(axis=0)
    labels, _ = dbscan_cosine(s_hat, eps, min_pts)
    groups = {}
    dists = {}

    def add(kind, members, d):
        groups.setdefault(kind, []).append(members)
        dists[kind] = max(dists.get(kind, 0.0), d)

    for lab in range(labels.max() + 1 if len(labels) else 0):
        members = np.flatnonzero(labels == lab)
        centroid = s_hat[members].mean(axis=0)
        kind, d = label_cluster(centroid, overall, k_top, scatter_threshold)
        add(kind, members, d)
    for i in np.flatnonzero(labels == -1):
        j = int(np.argmax(s_hat[i]))
        if s_hat[i, j] >= NOISE_SINGLE_THRESHOLD:
            add(GroupKind("single", (j,)), np.array([i]), 1.0 - float(s_hat[i, j]))
        else:
            add(SCATTER, np.array([i]), np.nan)
    out = []
    for kind in sorted(groups, key=lambda k: (k.kind, k.columns)):
        idx = np.sort(np.concatenate(groups[kind]))
        out.append(LayoutAssignment(signatures.ids[idx], kind, dists[kind]))
    return out


def _order_for(kind, queries, capacity):
    if kind.kind == "single":
        est = SortLayout(kind.columns[0])
        return (lambda rows: est.transform(rows)), est.layout, False
    if kind.kind == "multi" and len(kind.columns) >= 2:
        cols = kind.columns[:3]
        est = HilbertOrder(cols)
        return (lambda rows: est.fit_transform(rows)), est.layout, False
    if kind.kind == "multi":
        est = SortLayout(kind.columns[0])
        return (lambda rows: est.transform(rows)), est.layout, False
    tree = QdTreeLayout(min_leaf=capacity)
    return (lambda rows: tree.fit_predict(rows, queries)), (lambda leaf: Layout("qdtree", (), leaf)), True


def recluster_hybrid(table, assignments, queries=(), batch=0, mem_limit_rows=None, log=None):
    """Recluster each assigned group with its own layout. Returns ``(snapshot, cost)``.

    ``log`` (a list) receives one dict per group for the layout decision CSV.
    """
    snap = table.newest
    total = 0
    for gid, a in enumerate(assignments):
        ids = np.asarray(a.group, dtype=np.int64)
        ids = ids[np.isin(ids, snap.ids)]
        if len(ids) == 0:
            continue
        key, layout, by_leaf = _order_for(a.kind, queries, table.capacity)
        snap, added, n_rows = table.rewrite(ids, key, layout, batch, snap, bounds_from_key=by_leaf)
        total += sort_cost(n_rows, table.byte_width, mem_limit_rows)
        if log is not None:
            log.append({"batch": batch, "group_id": gid, "kind": a.kind.kind,
                        "columns": " ".join(map(str, a.kind.columns)),
                        "partition_count": len(ids), "anchor_distance": a.anchor_distance})
    return snap, total
