"""Workload-aware incremental reclustering driver.

Keeps a sliding window of recent query statistics, decides after each batch (or
each query) whether reclustering the most wasteful partitions pays off, and
tracks the savings reclustering actually realized so the window size and the
credit balance react to measured, not predicted, benefit.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .baselines import Policy, recluster_by_key
from .layout import assign_layouts, compute_signatures, recluster_hybrid
from .policy import (MEM_LIMIT_PARTITIONS, CostLedger, ReclusterPlan, SlidingWindow, WindowEntry, adapt_window, choose_cut,
                     column_savings, plan_recluster, plan_recluster_standard, prefix_costs,
                     query_savings, aggregate_savings)
from .table import BYTES_PER_VALUE

DECISION_FIELDS = ["batch", "query_seq", "decision", "cut", "est_cost", "est_savings", "W", "credit"]
LAYOUT_FIELDS = ["batch", "group_id", "kind", "columns", "partition_count", "anchor_distance"]


def _write_csv(rows, fields, fh):
    w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


@dataclass
class _Executed:
    seq: int
    horizon: int
    est_savings: float
    window_len: int
    cost: float
    old_mins: np.ndarray
    old_maxs: np.ndarray
    old_counts: np.ndarray
    new_mins: np.ndarray
    new_maxs: np.ndarray
    new_counts: np.ndarray

    def active(self, seq):
        return self.seq < seq <= self.seq + self.horizon


def _scanned_rows(mins, maxs, counts, query):
    mask = np.ones(len(counts), dtype=bool)
    for c, lo, hi in query.predicates:
        mask &= (mins[:, c] <= hi) & (maxs[:, c] >= lo)
    return int(counts[mask].sum())


class WairPolicy(Policy):
    """Cost-model driven reclustering with adaptive window and optional hybrid layouts.

    Parameters
    ----------
    alpha : float
        Aggressiveness: reclustering goes ahead when savings exceed ``alpha`` times its cost.
    beta : float
        Price per estimated additionally pruned partition, added to the savings.
    allowance : float
        Credit granted per query seen; only used with ``use_credit``.
    use_credit : bool
        Veto plans costing more than the accumulated credit.
    window, min_window, max_window : int
        Initial sliding window size and its bounds, in queries.
    adaptive : bool
        Double or halve the window by comparing realized and predicted savings.
    hybrid : bool
        Group selected partitions by savings signature and give each group its own layout.
        Without it every selection is sorted by one key, fixed at the first decision.
    fixed_count : int, optional
        Skip the cost model and always recluster this many top-ranked partitions.
    standard : bool
        Use the plain selection rule (no alpha, beta or credit); decisions match the
        extended rule with its defaults.
    mode : {"batch", "query"}
        Decide once after each batch or after every query.
    """

    name = "WAIR"

    def __init__(self, alpha=1.0, beta=0.0, allowance=0.0, use_credit=False, window=16, min_window=4,
                 max_window=1024, adaptive=True, hybrid=True, fixed_count=None, standard=False,
                 mode="batch", cost_limit_ratio=0.5, mem_limit_factor=MEM_LIMIT_PARTITIONS):
        if alpha < 0 or beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if mode not in ("batch", "query"):
            raise ValueError("mode must be 'batch' or 'query'")
        self.alpha = alpha
        self.beta = beta
        self.allowance = allowance
        self.use_credit = use_credit
        self.adaptive = adaptive
        self.hybrid = hybrid
        self.fixed_count = fixed_count
        self.standard = standard
        self.mode = mode
        self.cost_limit_ratio = cost_limit_ratio
        self.mem_limit_factor = mem_limit_factor
        self.window = SlidingWindow(window, min_window, max_window)
        self.seq = 0
        self.events = []
        self.decisions = []
        self.layout_log = []
        self.window_sizes = []
        self.realized_total = 0.0
        self.spent_total = 0.0
        self.fixed_key = None
        self.executed = []
        self._pred_acc = 0.0
        self._act_acc = 0.0
        self._since_adapt = 0

    def get_params(self):
        return {"alpha": self.alpha, "beta": self.beta, "allowance": self.allowance,
                "use_credit": self.use_credit, "adaptive": self.adaptive, "hybrid": self.hybrid,
                "fixed_count": self.fixed_count, "standard": self.standard, "mode": self.mode,
                "window": self.window.size}

    @property
    def credit(self):
        return self.realized_total - self.spent_total + self.allowance * self.seq

    # -- observation --------------------------------------------------------------

    def _realize(self, query, n_columns):
        width = query.read_columns(n_columns) * BYTES_PER_VALUE
        realized = predicted = 0.0
        live = []
        for ev in self.events:
            if ev.active(self.seq):
                old = _scanned_rows(ev.old_mins, ev.old_maxs, ev.old_counts, query)
                new = _scanned_rows(ev.new_mins, ev.new_maxs, ev.new_counts, query)
                realized += (old - new) * width
                predicted += ev.est_savings / max(ev.window_len, 1)
            if self.seq < ev.seq + ev.horizon:
                live.append(ev)
        self.events = live
        return realized, predicted

    def on_query(self, ctx, query, stats):
        self.seq += 1
        realized, predicted = self._realize(query, ctx.table.n_columns)
        self.realized_total += realized
        self.window.push(WindowEntry(self.seq, query, stats, query_savings(stats), stats.cost_units,
                                     realized))
        self._pred_acc += predicted
        self._act_acc += realized
        self._since_adapt += 1
        if self.adaptive and self.fixed_count is None and self._since_adapt >= self.window.size:
            if self._pred_acc or self._act_acc:
                self.window.resize(adapt_window(self.window.size, self._act_acc, self._pred_acc,
                                                self.window.min_size, self.window.max_size))
            self.window.predicted_savings_sum = self._pred_acc
            self.window.actual_savings_sum = self._act_acc
            self._pred_acc = self._act_acc = 0.0
            self._since_adapt = 0
        if self.mode == "query" and ctx.recluster_enabled:
            return self._decide(ctx)
        return 0

    def after_batch(self, ctx):
        self.window_sizes.append(self.window.size)
        if self.mode == "batch" and ctx.recluster_enabled:
            return self._decide(ctx)
        return 0

    def write_decisions(self, fh):
        """Decision log as CSV, one row per planning call."""
        _write_csv(self.decisions, DECISION_FIELDS, fh)

    def write_layouts(self, fh):
        _write_csv(self.layout_log, LAYOUT_FIELDS, fh)

    # -- decisions --------------------------------------------------------------------

    def ledger(self):
        first = self.window.first_seq
        spent = sum(cost for seq, cost in self.executed if first is not None and seq >= first)
        return CostLedger(
            window_recluster_cost=spent,
            window_query_savings=self.window.actual_savings(),
            cost_limit=self.cost_limit_ratio * self.window.query_cost(),
            credit=self.credit, alpha=self.alpha, beta=self.beta, allowance=self.allowance,
            use_credit=self.use_credit, realized_total=self.realized_total,
            spent_total=self.spent_total, queries_seen=self.seq)

    def plan(self, snapshot, mem_limit_rows=None):
        led = self.ledger()
        if self.fixed_count is not None:
            return self._fixed_plan(snapshot, mem_limit_rows)
        if self.standard:
            return plan_recluster_standard(self.window, snapshot, led.debt, led.cost_limit, mem_limit_rows)
        return plan_recluster(self.window, snapshot, led, mem_limit_rows)

    def _fixed_plan(self, snapshot, mem_limit_rows):
        ids, savings, _ = aggregate_savings(self.window, snapshot)
        order = np.lexsort((ids, -savings))
        ids, savings = ids[order], savings[order]
        costs = prefix_costs(snapshot.counts[snapshot.positions(ids)], snapshot.n_columns * BYTES_PER_VALUE,
                             mem_limit_rows) if len(ids) else np.empty(0)
        _, net = choose_cut(savings, costs)
        cut = min(self.fixed_count, len(ids))
        plan = ReclusterPlan(ids, savings, costs, net, cut=cut, window_len=len(self.window))
        if cut:
            plan.est_cost = float(costs[cut - 1])
            plan.est_savings = float(savings[:cut].sum())
            plan.go, plan.reason = True, "fixed count"
        else:
            plan.reason = "no candidates"
        return plan

    def _decide(self, ctx):
        table = ctx.table
        snap = table.newest
        mem_limit = self.mem_limit_factor * table.capacity if self.mem_limit_factor else None
        plan = self.plan(snap, mem_limit)
        self.decisions.append({
            "batch": ctx.batch, "query_seq": self.seq, "decision": plan.decision, "cut": plan.cut,
            "est_cost": plan.est_cost, "est_savings": plan.est_savings, "W": self.window.size,
            "credit": self.credit})
        if not plan.go:
            return 0
        selected = plan.selected
        pos = snap.positions(selected)
        old = (snap.mins[pos], snap.maxs[pos], snap.counts[pos])
        if self.hybrid:
            sigs = compute_signatures(self.window, table.n_columns, selected)
            groups = assign_layouts(sigs)
            queries = [e.query for e in self.window]
            new_snap, cost = recluster_hybrid(table, groups, queries, ctx.batch, mem_limit, self.layout_log)
        else:
            if self.fixed_key is None:
                total = sum(column_savings(e.query, e.stats, table.n_columns) for e in self.window)
                self.fixed_key = int(np.argmax(total))
            new_snap, cost = recluster_by_key(table, selected, (self.fixed_key,), ctx.batch, mem_limit)
        added = ~np.isin(new_snap.ids, snap.ids)
        self.events.append(_Executed(
            self.seq, self.window.size, plan.est_savings, plan.window_len, cost, *old,
            new_snap.mins[added], new_snap.maxs[added], new_snap.counts[added]))
        self.executed.append((self.seq, cost))
        self.spent_total += cost
        return cost


def wair_variant(name, **overrides):
    """Named ablations: ``WAIR``, ``WAIR-fixed-key`` (no hybrid layout) and
    ``WAIR-fixed-window`` (no cost model or window adaptation)."""
    params = dict(overrides)
    if name == "WAIR-fixed-key":
        params.setdefault("hybrid", False)
    elif name == "WAIR-fixed-window":
        params.setdefault("adaptive", False)
        params.setdefault("fixed_count", params.pop("fixed_count", None) or 8)
    elif name != "WAIR":
        raise ValueError(f"unknown WAIR variant {name!r}")
    pol = WairPolicy(**params)
    pol.name = name
    return pol
