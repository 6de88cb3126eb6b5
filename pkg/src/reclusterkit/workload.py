"""Synthetic batch workloads: time-correlated ingestion plus shifting range-query mixes.

A workload is a sequence of periods, each made of batches. Every batch ingests
``rows_per_batch`` rows in event-time order and then runs a query mix. Inside a
period, consecutive mixes differ by exactly ``round(shifting_rate * count)``
regenerated queries; between periods the predicate columns may change.

Time columns model dates: the base event time advances ``batch_span`` units per
batch and each time column adds a per-row lag drawn uniformly from
``[lag_min, lag]`` batches (an order date has no lag, a ship date a long one).
"""

import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .query import RangeQuery

DISTRIBUTIONS = ("uniform", "zipf", "gaussian")
SWEEP_PARAMETERS = ("start_batch", "shifting_rate", "skewness", "predicate_columns_per_query",
                    "selectivity")


class ConfigError(ValueError):
    """A workload configuration is malformed."""


@dataclass
class ColumnSpec:
    name: str
    kind: str = "time"  # time | uniform
    lag: float = 0.0
    lag_min: float = 0.0
    domain: int = 1_000_000


@dataclass
class StreamSpec:
    """One sub-workload of a batch's query mix (e.g. a global and a local stream)."""

    label: str = ""
    distribution: str = "uniform"
    queries_per_batch: int = 8
    alpha: float = 2.0
    sigma: float = 2.0


@dataclass
class PeriodConfig:
    predicate_columns: dict = field(default_factory=lambda: {0: 1.0})
    streams: list = field(default_factory=lambda: [StreamSpec()])
    selectivity: float = 0.03
    shifting_rate: float = 0.25
    predicate_columns_per_query: float = 1.0
    fresh_start: bool = True

    def weights(self):
        cols = sorted(self.predicate_columns, key=int)
        w = np.array([float(self.predicate_columns[c]) for c in cols])
        return [int(c) for c in cols], w / w.sum()

    def oracle_key(self, limit=3):
        """Predicate columns by descending weight (ties by id), at most ``limit``."""
        cols, w = self.weights()
        order = sorted(range(len(cols)), key=lambda i: (-w[i], cols[i]))
        return tuple(cols[i] for i in order[:limit])


@dataclass
class WorkloadConfig:
    seed: int = 0
    columns: list = field(default_factory=lambda: [ColumnSpec("t0")])
    partition_capacity: int = 32
    rows_per_batch: int = 1600
    batches_per_period: int = 12
    batch_span: int = 1000
    periods: list = field(default_factory=lambda: [PeriodConfig()])
    initial_pool_periods: int = 0
    start_batch: int = None
    eval_start_batch: int = None
    segregate_columns: list = None

    @property
    def n_columns(self):
        return len(self.columns)

    @property
    def n_batches(self):
        return self.batches_per_period * len(self.periods)

    @property
    def recluster_start(self):
        if self.start_batch is not None:
            return self.start_batch
        return self.initial_pool_periods * self.batches_per_period

    @property
    def eval_start(self):
        if self.eval_start_batch is not None:
            return self.eval_start_batch
        return self.initial_pool_periods * self.batches_per_period

    def period_of(self, batch):
        return min(batch // self.batches_per_period, len(self.periods) - 1)

    def validate(self):
        if not self.columns:
            raise ConfigError("at least one column is required")
        for c in self.columns:
            if c.kind not in ("time", "uniform"):
                raise ConfigError(f"column {c.name}: unknown kind {c.kind!r}")
            if c.lag < c.lag_min or c.lag_min < 0:
                raise ConfigError(f"column {c.name}: need 0 <= lag_min <= lag")
            if c.domain < 1:
                raise ConfigError(f"column {c.name}: domain must be positive")
        if self.partition_capacity < 1 or self.rows_per_batch < 1 or self.batch_span < 1:
            raise ConfigError("partition_capacity, rows_per_batch and batch_span must be positive")
        if self.batches_per_period < 1:
            raise ConfigError("batches_per_period must be >= 1")
        if not self.periods:
            raise ConfigError("at least one period is required")
        if not 0 <= self.initial_pool_periods < len(self.periods):
            raise ConfigError("initial_pool_periods must be smaller than the number of periods")
        for i, p in enumerate(self.periods):
            if not p.predicate_columns:
                raise ConfigError(f"period {i}: no predicate columns")
            for c, w in p.predicate_columns.items():
                if not 0 <= int(c) < self.n_columns:
                    raise ConfigError(f"period {i}: unknown predicate column {c}")
                if w <= 0:
                    raise ConfigError(f"period {i}: weights must be positive")
            if not 0 < p.selectivity <= 1:
                raise ConfigError(f"period {i}: selectivity must lie in (0, 1]")
            if not 0 <= p.shifting_rate <= 1:
                raise ConfigError(f"period {i}: shifting_rate must lie in [0, 1]")
            if p.predicate_columns_per_query < 1:
                raise ConfigError(f"period {i}: predicate_columns_per_query must be >= 1")
            if not p.streams:
                raise ConfigError(f"period {i}: at least one query stream is required")
            for s in p.streams:
                if s.distribution not in DISTRIBUTIONS:
                    raise ConfigError(f"period {i}: unknown distribution {s.distribution!r}")
                if s.queries_per_batch < 0:
                    raise ConfigError(f"period {i}: queries_per_batch must be >= 0")
        if self.segregate_columns is not None:
            cols = list(self.segregate_columns)
            if len(cols) < 2 or len(set(cols)) != len(cols):
                raise ConfigError("segregate_columns needs at least two distinct columns")
            for c in cols:
                if not 0 <= c < self.n_columns or self.columns[c].kind != "uniform":
                    raise ConfigError("segregate_columns must name uniform columns")
        return self

    # -- serialization ---------------------------------------------------------------

    def to_dict(self):
        d = asdict(self)
        for p in d["periods"]:
            p["predicate_columns"] = {str(k): v for k, v in p["predicate_columns"].items()}
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            d = dict(d)
            cols = [ColumnSpec(**c) for c in d.pop("columns")]
            periods = []
            for p in d.pop("periods"):
                p = dict(p)
                streams = [StreamSpec(**s) for s in p.pop("streams", [{}])]
                preds = p.pop("predicate_columns", {"0": 1.0})
                if isinstance(preds, list):
                    preds = {c: 1.0 for c in preds}
                p["predicate_columns"] = {int(k): float(v) for k, v in preds.items()}
                periods.append(PeriodConfig(streams=streams, **p))
            return cls(columns=cols, periods=periods, **d).validate()
        except (TypeError, KeyError, AttributeError) as exc:
            raise ConfigError(f"malformed workload config: {exc}") from exc

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


# -- data generation ---------------------------------------------------------------------

def gen_batch_rows(config, batch, seed=None):
    """Rows ingested at ``batch``, in event-time order."""
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng([seed, 0, batch])
    n, span = config.rows_per_batch, config.batch_span
    base = np.sort(rng.integers(batch * span, (batch + 1) * span, n))
    cols = []
    for c in config.columns:
        if c.kind == "time":
            lag = rng.uniform(c.lag_min, c.lag, n) if c.lag > 0 else np.zeros(n)
            cols.append(base + np.round(lag * span).astype(np.int64))
        else:
            cols.append(rng.integers(0, c.domain, n))
    rows = np.column_stack(cols).astype(np.int64)
    if config.segregate_columns:
        seg = list(config.segregate_columns)
        own = seg[batch % len(seg)]
        for c in seg:
            if c != own:
                rows[:, c] += config.columns[c].domain
    return rows


def query_domain(config, column, batch):
    """Half-open value range queries on ``column`` draw from at ``batch``."""
    spec = config.columns[column]
    if spec.kind == "time":
        span = config.batch_span
        return int(round(spec.lag_min * span)), (batch + 1) * span + int(round(spec.lag * span))
    return 0, spec.domain


def _draw_start(rng, stream, lo, hi, width, batch, config, is_time):
    room = hi - lo - width
    if room <= 0:
        return lo
    if stream.distribution == "uniform":
        return int(rng.integers(lo, lo + room + 1))
    if stream.distribution == "zipf":
        # recency counts back from the ingestion clock; lagged values past it are
        # not recent, only sparsely populated
        top = min(hi, (batch + 1) * config.batch_span) if is_time else hi
        buckets = batch + 1
        ranks = np.arange(1, buckets + 1)
        p = ranks ** -float(stream.alpha)
        k = int(rng.choice(ranks, p=p / p.sum()))  # 1 = most recent bucket
        size = max(top - lo, 1) / buckets
        pos = top - k * size + rng.uniform(0, size)
    else:
        # the reference advances one batch per batch
        if is_time:
            ref = (batch + 0.5) * config.batch_span
        else:
            ref = lo + (hi - lo) * (batch + 0.5) / config.n_batches
        pos = rng.normal(ref, stream.sigma * config.batch_span)
    start = int(round(pos - width / 2))
    return min(max(start, lo), lo + room)


def _pick_columns(rng, period, n_columns):
    cols, w = period.weights()
    first = int(rng.choice(cols, p=w))
    avg = period.predicate_columns_per_query
    k = int(avg) + int(rng.random() < avg - int(avg))
    chosen = [first]
    others = [c for c in range(n_columns) if c != first]
    extra = min(k - 1, len(others))
    if extra > 0:
        chosen += [int(c) for c in rng.choice(others, size=extra, replace=False)]
    return chosen


def make_query(rng, config, period, stream, batch):
    preds = []
    for c in _pick_columns(rng, period, config.n_columns):
        lo, hi = query_domain(config, c, batch)
        width = max(1, int(round(period.selectivity * (hi - lo))))
        start = _draw_start(rng, stream, lo, hi, width, batch, config,
                            config.columns[c].kind == "time")
        preds.append((c, start, start + width - 1))
    return RangeQuery(tuple(sorted(preds)), batch_index=batch, label=stream.label)


def gen_query_mix(config, batch, previous=None, seed=None):
    """Query mix of ``batch``: fresh at a period start, otherwise a partial regeneration of ``previous``.

    Returns ``(queries, regenerated)`` where ``regenerated`` counts the new queries.
    """
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng([seed, 1, batch])
    period = config.periods[config.period_of(batch)]
    fresh = previous is None or (batch % config.batches_per_period == 0 and period.fresh_start)
    out, regenerated = [], 0
    for stream in period.streams:
        count = stream.queries_per_batch
        prev = None if fresh else [q for q in previous if q.label == stream.label][:count]
        if prev is None or len(prev) != count:
            mix = [make_query(rng, config, period, stream, batch) for _ in range(count)]
            regenerated += count
        else:
            n_new = int(round(period.shifting_rate * count))
            redo = set(rng.choice(count, size=n_new, replace=False).tolist()) if n_new else set()
            mix = [make_query(rng, config, period, stream, batch) if i in redo
                   else RangeQuery(q.predicates, q.projection, batch, q.label)
                   for i, q in enumerate(prev)]
            regenerated += n_new
        out.extend(mix)
    # streams arrive interleaved; a separate stream keeps query contents independent of the order
    order = np.random.default_rng([seed, 2, batch]).permutation(len(out))
    return [out[i] for i in order], regenerated


@dataclass
class Trace:
    config: WorkloadConfig
    batches: list  # (rows, queries) per batch

    def __iter__(self):
        return iter(self.batches)

    def to_ndjson(self, fh):
        for b, (rows, queries) in enumerate(self.batches):
            fh.write(json.dumps({"kind": "ingest", "batch": b, "rows": rows.tolist()}) + "\n")
            for q in queries:
                fh.write(json.dumps({"kind": "query", **q.to_dict()}) + "\n")


def generate_trace(config):
    config.validate()
    batches = []
    prev = None
    for b in range(config.n_batches):
        rows = gen_batch_rows(config, b)
        prev, _ = gen_query_mix(config, b, prev)
        batches.append((rows, prev))
    return Trace(config, batches)


def sweep_config(base, parameter, values):
    """One config per value of ``parameter``, everything else (seed included) unchanged.

    ``skewness`` values are ``"uniform"``, ``"zipf:<alpha>"`` or ``"gaussian:<sigma>"``
    and replace the distribution of every query stream.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"unknown sweep parameter {parameter!r}; choose from {SWEEP_PARAMETERS}")
    out = []
    for v in values:
        cfg = copy.deepcopy(base)
        if parameter == "start_batch":
            cfg.start_batch = int(v)
        else:
            for p in cfg.periods:
                if parameter == "shifting_rate":
                    p.shifting_rate = float(v)
                elif parameter == "selectivity":
                    p.selectivity = float(v)
                elif parameter == "predicate_columns_per_query":
                    p.predicate_columns_per_query = float(v)
                else:
                    kind, _, arg = str(v).partition(":")
                    for s in p.streams:
                        s.distribution = kind
                        if kind == "zipf" and arg:
                            s.alpha = float(arg)
                        if kind == "gaussian" and arg:
                            s.sigma = float(arg)
        out.append(cfg.validate())
    return out


# -- stock configurations -----------------------------------------------------------------

def _date_columns():
    return [
        ColumnSpec("orderdate", "time", 0.0),
        ColumnSpec("shipdate", "time", 33.0),
        ColumnSpec("commitdate", "time", 3.0, 1.0),
        ColumnSpec("quantity", "uniform", domain=1_000_000),
    ]


def _two_streams(alpha=2.0):
    return [StreamSpec("global", "uniform", 8), StreamSpec("local", "zipf", 8, alpha=alpha)]


def dynamic_config(seed=0, capacity=32, rows_per_batch=None):
    """Six 12-batch periods: a two-period pool, mild drift, high drift, a predicate
    switch to the commit date, then a 2:1 ship/commit mix."""
    ship, commit = {1: 1.0}, {2: 1.0}
    periods = [
        PeriodConfig(ship, _two_streams(), 0.03, 0.25),
        PeriodConfig(ship, _two_streams(), 0.03, 0.25),
        PeriodConfig(ship, _two_streams(), 0.03, 0.25),
        PeriodConfig(ship, _two_streams(), 0.03, 0.75),
        PeriodConfig(commit, _two_streams(), 0.03, 0.75),
        PeriodConfig({1: 2.0, 2: 1.0}, _two_streams(), 0.03, 0.75),
    ]
    return WorkloadConfig(seed, _date_columns(), capacity, rows_per_batch or 50 * capacity, 12, 1000,
                          periods, initial_pool_periods=2).validate()


def stable_config(seed=0, capacity=32, rows_per_batch=None, batches=36):
    """One predicate column with the global and local streams drifting at 25%,
    reclustering from the first batch."""
    period = PeriodConfig({1: 1.0}, _two_streams(), 0.03, 0.25)
    return WorkloadConfig(seed, _date_columns(), capacity, rows_per_batch or 50 * capacity, batches, 1000,
                          [period], initial_pool_periods=0).validate()


def two_population_config(seed=0, capacity=32, rows_per_batch=None, batches=24):
    """Alternating batches whose rows are only reachable through column A or column B;
    half of the queries filter on each."""
    cols = [ColumnSpec("t", "time"), ColumnSpec("a", "uniform"), ColumnSpec("b", "uniform")]
    period = PeriodConfig({1: 1.0, 2: 1.0}, [StreamSpec("mixed", "uniform", 16)], 0.02, 0.25)
    return WorkloadConfig(seed, cols, capacity, rows_per_batch or 50 * capacity, batches, 1000,
                          [period], initial_pool_periods=0, segregate_columns=[1, 2]).validate()


def sensitivity_config(seed=0, capacity=32, rows_per_batch=None, batches_per_period=4, periods=6):
    """Recency-skewed single-column workload for parameter sweeps: every period keeps
    drifting the previous period's mix at a 75% shifting rate, the first is the pool."""
    local = [StreamSpec("local", "zipf", 16, alpha=2.0)]
    first = PeriodConfig({1: 1.0}, local, 0.03, 0.75)
    rest = [PeriodConfig({1: 1.0}, local, 0.03, 0.75, fresh_start=False) for _ in range(periods - 1)]
    return WorkloadConfig(seed, _date_columns(), capacity, rows_per_batch or 50 * capacity, batches_per_period,
                          1000, [first] + rest, initial_pool_periods=1).validate()


STOCK_CONFIGS = {
    "dynamic": dynamic_config,
    "stable": stable_config,
    "two-population": two_population_config,
    "sensitivity": sensitivity_config,
}
