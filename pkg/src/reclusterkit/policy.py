"""Workload-aware cost model: savings estimates, sliding window and recluster planning.

All quantities are in *cost units*, i.e. bytes processed. A query's cost is the
bytes it reads; a reclustering costs the bytes it reads plus the bytes it writes
(twice that when the input no longer fits the in-memory sort budget).
"""

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .table import BYTES_PER_VALUE

# in-memory sort budget of the simulated system, in partitions' worth of rows
MEM_LIMIT_PARTITIONS = 64


def mem_limit_for(table, mem_limit_rows=None):
    """``mem_limit_rows`` if given, else the system sort budget for ``table``."""
    if mem_limit_rows is not None:
        return mem_limit_rows
    return MEM_LIMIT_PARTITIONS * table.capacity


def sort_cost(n_rows, byte_width, mem_limit_rows=None):
    """Cost of one reclustering pass over ``n_rows`` rows of ``byte_width`` bytes.

    One read plus one write when the rows fit in memory, otherwise a two-pass
    external merge sort (read and write twice).
    """
    nbytes = n_rows * byte_width
    if mem_limit_rows is None or n_rows <= mem_limit_rows:
        return 2 * nbytes
    return 4 * nbytes


def estimate_recluster_cost(partitions, mem_limit_rows=None):
    partitions = list(partitions)
    if not partitions:
        raise ValueError("cannot estimate the cost of reclustering an empty set")
    n_rows = sum(p.n_rows for p in partitions)
    return sort_cost(n_rows, partitions[0].rows.shape[1] * BYTES_PER_VALUE, mem_limit_rows)


def saving_formula(u, size_read_p, size_read_q, cost_read_q):
    """Share of a query's read cost wasted on one partition: (1-u) * size(P)/size(Q) * cost(Q)."""
    if size_read_q == 0:
        return 0.0
    return (1.0 - u) * size_read_p / size_read_q * cost_read_q


def query_savings(stats):
    """Vectorized :func:`saving_formula` for every partition scanned in ``stats``."""
    if stats.bytes_read == 0:
        return np.zeros(len(stats.scanned_ids))
    return (1.0 - stats.utilization) * stats.sizes_read / stats.bytes_read * stats.cost_units


def estimate_query_saving(partition_id, stats):
    hit = np.flatnonzero(stats.scanned_ids == partition_id)
    if len(hit) == 0:
        return 0.0
    i = hit[0]
    return saving_formula(stats.utilization[i], stats.sizes_read[i], stats.bytes_read, stats.cost_units)


def column_savings(query, stats, n_columns):
    """Split a query's total estimated saving equally across its predicate columns."""
    out = np.zeros(n_columns)
    total = query_savings(stats).sum()
    cols = query.columns
    for c in cols:
        out[c] += total / len(cols)
    return out


def performance_bonus(savings_by_query, beta, pruned_by_query):
    """Add ``beta`` per additionally pruned partition to each query's estimated saving."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    savings = np.asarray(savings_by_query, dtype=float)
    if beta == 0:
        return savings
    return savings + beta * np.abs(np.asarray(pruned_by_query, dtype=float))


@dataclass
class WindowEntry:
    seq: int
    query: object
    stats: object
    savings: np.ndarray
    cost: float
    actual_saving: float = 0.0


class SlidingWindow:
    """Bounded history of the most recent ``size`` queries and their statistics."""

    def __init__(self, size=16, min_size=4, max_size=1024):
        if not 1 <= min_size <= size <= max_size:
            raise ValueError(f"need 1 <= min_size <= size <= max_size, got {min_size}, {size}, {max_size}")
        self.size = size
        self.min_size = min_size
        self.max_size = max_size
        self.entries = deque()
        self.predicted_savings_sum = 0.0
        self.actual_savings_sum = 0.0

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def push(self, entry):
        self.entries.append(entry)
        self._trim()

    def resize(self, size):
        self.size = int(min(max(size, self.min_size), self.max_size))
        self._trim()

    def _trim(self):
        while len(self.entries) > self.size:
            self.entries.popleft()

    @property
    def first_seq(self):
        return self.entries[0].seq if self.entries else None

    def query_cost(self):
        return sum(e.cost for e in self.entries)

    def actual_savings(self):
        return sum(e.actual_saving for e in self.entries)


def adapt_window(size, actual, predicted, min_size, max_size):
    """Double the window when realized savings beat the prediction, otherwise halve it."""
    if actual > predicted:
        return min(2 * size, max_size)
    return max(math.ceil(size / 2), min_size)


@dataclass
class CostLedger:
    """Reclustering debt within the window and the long-run credit balance."""

    window_recluster_cost: float = 0.0
    window_query_savings: float = 0.0
    cost_limit: float = math.inf
    credit: float = 0.0
    alpha: float = 1.0
    beta: float = 0.0
    allowance: float = 0.0
    use_credit: bool = False
    realized_total: float = 0.0
    spent_total: float = 0.0
    queries_seen: int = 0

    @property
    def debt(self):
        return self.window_recluster_cost - self.window_query_savings


def update_credit(ledger, realized, spent, queries_seen):
    """Credit = realized savings - executed recluster costs + allowance per query seen.

    ``realized`` and ``spent`` are running totals of measured quantities only.
    """
    return replace(ledger, realized_total=realized, spent_total=spent, queries_seen=queries_seen,
                   credit=realized - spent + ledger.allowance * queries_seen)


@dataclass
class ReclusterPlan:
    candidates: np.ndarray
    savings: np.ndarray
    prefix_costs: np.ndarray
    net: np.ndarray
    cut: int = 0
    est_cost: float = 0.0
    est_savings: float = 0.0
    go: bool = False
    reason: str = ""
    window_len: int = 0
    bonus: np.ndarray = field(default=None, repr=False)

    @property
    def selected(self):
        return self.candidates[:self.cut]

    @property
    def decision(self):
        return "go" if self.go else "no-go"


def aggregate_savings(window, snapshot=None, beta=0.0):
    """Per-partition sum of window savings; only partitions still live in ``snapshot``.

    With ``beta > 0`` every (partition, query) pair also earns ``beta`` times the
    partition's estimated contribution to extra pruned partitions, ``1 - u``.
    Returns ``(ids, savings, bonus)`` sorted by id.
    """
    entries = list(window)
    if not entries:
        empty = np.empty(0)
        return np.empty(0, dtype=np.int64), empty, empty
    ids = np.concatenate([e.stats.scanned_ids for e in entries])
    sav = np.concatenate([e.savings for e in entries])
    pruned = np.concatenate([1.0 - e.stats.utilization for e in entries])
    uniq, inv = np.unique(ids, return_inverse=True)
    total = np.bincount(inv, weights=sav, minlength=len(uniq))
    bonus = np.bincount(inv, weights=pruned, minlength=len(uniq)) * beta
    if snapshot is not None:
        live = np.isin(uniq, snapshot.ids)
        uniq, total, bonus = uniq[live], total[live], bonus[live]
    return uniq, total, bonus


def prefix_costs(row_counts, byte_width, mem_limit_rows=None):
    rows = np.cumsum(np.asarray(row_counts, dtype=np.int64))
    cost = 2.0 * rows * byte_width
    if mem_limit_rows is not None:
        cost = np.where(rows > mem_limit_rows, 2.0 * cost, cost)
    return cost


def choose_cut(savings_sorted, costs, alpha=1.0):
    """Prefix length minimizing ``alpha * cost - savings``; ties go to the shorter prefix."""
    net = alpha * np.asarray(costs, dtype=float) - np.cumsum(savings_sorted)
    if len(net) == 0:
        return 0, net
    return int(np.argmin(net)) + 1, net


def _ranked(window, snapshot, byte_width, mem_limit_rows, beta=0.0):
    ids, savings, bonus = aggregate_savings(window, snapshot, beta)
    total = savings + bonus if beta else savings
    order = np.lexsort((ids, -total))
    ids, total = ids[order], total[order]
    counts = snapshot.counts[snapshot.positions(ids)] if len(ids) else np.empty(0, np.int64)
    return ids, total, prefix_costs(counts, byte_width, mem_limit_rows), bonus[order]


def plan_recluster_standard(window, snapshot, debt=0.0, cost_limit=math.inf, mem_limit_rows=None):
    """Plain workload-aware selection: recluster the best prefix iff it saves more than it costs."""
    byte_width = snapshot.n_columns * BYTES_PER_VALUE
    ids, savings, costs, _ = _ranked(window, snapshot, byte_width, mem_limit_rows)
    plan = ReclusterPlan(ids, savings, costs, np.empty(0), window_len=len(window))
    if len(ids) == 0:
        plan.reason = "no candidates"
        return plan
    cut, net = choose_cut(savings, costs, 1.0)
    plan.net, plan.cut = net, cut
    plan.est_cost = float(costs[cut - 1])
    plan.est_savings = float(savings[:cut].sum())
    if not net[cut - 1] < 0:
        plan.reason = "no estimated benefit"
    elif not debt + plan.est_cost < cost_limit:
        plan.reason = "cost limit exceeded"
    else:
        plan.go = True
        plan.reason = "net benefit"
    return plan


def plan_recluster(window, snapshot, ledger=None, mem_limit_rows=None):
    """Selection with aggressiveness ``alpha``, performance price ``beta`` and credit budget."""
    ledger = ledger or CostLedger()
    byte_width = snapshot.n_columns * BYTES_PER_VALUE
    ids, savings, costs, bonus = _ranked(window, snapshot, byte_width, mem_limit_rows, ledger.beta)
    plan = ReclusterPlan(ids, savings, costs, np.empty(0), window_len=len(window), bonus=bonus)
    if len(ids) == 0:
        plan.reason = "no candidates"
        return plan
    cut, net = choose_cut(savings, costs, ledger.alpha)
    plan.net, plan.cut = net, cut
    plan.est_cost = float(costs[cut - 1])
    plan.est_savings = float(savings[:cut].sum())
    if not net[cut - 1] < 0:
        plan.reason = "no estimated benefit"
    elif not ledger.debt + plan.est_cost < ledger.cost_limit:
        plan.reason = "cost limit exceeded"
    elif ledger.use_credit and plan.est_cost > ledger.credit:
        plan.reason = "insufficient credit"
    else:
        plan.go = True
        plan.reason = "net benefit"
    return plan
