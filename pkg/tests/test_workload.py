import io
import json

import numpy as np
import pytest

from reclusterkit.workload import (ColumnSpec, ConfigError, PeriodConfig, StreamSpec, WorkloadConfig,
                                   dynamic_config, gen_batch_rows, gen_query_mix, generate_trace,
                                   make_query, query_domain, sweep_config)


def _cfg(lag=0.0, rate=0.25, streams=None, batches=4, periods=1, selectivity=0.03, **kw):
    period = PeriodConfig({0: 1.0}, streams or [StreamSpec("q", "uniform", 8)], selectivity, rate)
    return WorkloadConfig(7, [ColumnSpec("t", "time", lag), ColumnSpec("v", "uniform", domain=1000)],
                          8, 200, batches, 1000, [period] * periods, **kw).validate()


def _overlaps(a, b):
    return a[:, 0].max() >= b[:, 0].min()


def test_rows_are_deterministic():
    cfg = _cfg(lag=2.0)
    assert np.array_equal(gen_batch_rows(cfg, 3), gen_batch_rows(cfg, 3))
    assert not np.array_equal(gen_batch_rows(cfg, 3), gen_batch_rows(cfg, 3, seed=8))
    a, b = io.StringIO(), io.StringIO()
    generate_trace(cfg).to_ndjson(a)
    generate_trace(cfg).to_ndjson(b)
    assert a.getvalue() == b.getvalue()


def test_no_lag_gives_disjoint_batches():
    cfg = _cfg()
    rows = [gen_batch_rows(cfg, b) for b in range(4)]
    for r in rows:
        assert np.all(np.diff(r[:, 0]) >= 0)
    assert not any(_overlaps(rows[b], rows[b + 1]) for b in range(3))


def test_lag_window_makes_batches_overlap():
    cfg = _cfg(lag=3.0)
    rows = [gen_batch_rows(cfg, b) for b in range(4)]
    assert all(_overlaps(rows[b], rows[b + 1]) for b in range(3))


@pytest.mark.parametrize("rate, expected", [(0.0, 0), (0.25, 2), (1.0, 8)])
def test_shifting_rate_regenerates_exact_count(rate, expected):
    cfg = _cfg(rate=rate)
    prev, _ = gen_query_mix(cfg, 0)
    for b in range(1, 4):
        mix, n_new = gen_query_mix(cfg, b, prev)
        assert n_new == expected
        kept = sum(q.predicates in {p.predicates for p in prev} for q in mix)
        assert kept == 8 - expected
        prev = mix


def test_period_start_draws_fresh_queries():
    cfg = _cfg(rate=0.0, periods=2)
    prev, _ = gen_query_mix(cfg, 3, gen_query_mix(cfg, 0)[0])
    mix, n_new = gen_query_mix(cfg, 4, prev)
    assert n_new == 8


def test_streams_keep_their_labels():
    cfg = _cfg(streams=[StreamSpec("global", "uniform", 8), StreamSpec("local", "zipf", 8)])
    mix, _ = gen_query_mix(cfg, 2)
    labels = [q.label for q in mix]
    assert labels.count("global") == 8 and labels.count("local") == 8
    assert labels != sorted(labels)  # interleaved


def _matched_fraction(cfg, queries_per_batch=250):
    fractions = []
    table = []
    for b in range(cfg.n_batches):
        table.append(gen_batch_rows(cfg, b))
        rows = np.concatenate(table)
        rng = np.random.default_rng([99, b])
        period = cfg.periods[cfg.period_of(b)]
        for _ in range(queries_per_batch):
            q = make_query(rng, cfg, period, period.streams[0], b)
            hit = np.ones(len(rows), dtype=bool)
            for c, lo, hi in q.predicates:
                hit &= (rows[:, c] >= lo) & (rows[:, c] <= hi)
            fractions.append(hit.mean())
    return float(np.mean(fractions)), len(fractions)


@pytest.mark.parametrize("lag", [0.0, 3.0])
def test_selectivity_within_twenty_percent(lag):
    cfg = _cfg(lag=lag, batches=6)
    mean, n = _matched_fraction(cfg)
    assert n >= 1000
    assert mean == pytest.approx(0.03, rel=0.2)


def test_selectivity_on_default_dynamic_workload():
    cfg = sweep_config(dynamic_config(0, capacity=8, rows_per_batch=200), "skewness", ["uniform"])[0]
    cfg.batches_per_period = 2
    mean, n = _matched_fraction(cfg, 100)
    assert n >= 1000
    assert mean == pytest.approx(0.03, rel=0.2)


def test_zipf_prefers_recent_quartile():
    cfg = _cfg(streams=[StreamSpec("local", "zipf", 1, alpha=2.0)], batches=20)
    rng = np.random.default_rng(5)
    b = 19
    lo, hi = query_domain(cfg, 0, b)
    period = cfg.periods[0]
    centers = []
    for _ in range(2000):
        (_, a, z), = make_query(rng, cfg, period, period.streams[0], b).predicates
        centers.append((a + z) / 2)
    rel = (np.array(centers) - lo) / (hi - lo)
    recent = np.count_nonzero(rel >= 0.75)
    oldest = np.count_nonzero(rel < 0.25)
    assert recent >= 3 * max(oldest, 1)


def test_time_domain_follows_live_values():
    cfg = _cfg(lag=3.0)
    rows = np.concatenate([gen_batch_rows(cfg, b) for b in range(3)])
    lo, hi = query_domain(cfg, 0, 2)
    assert lo <= rows[:, 0].min() and rows[:, 0].max() < hi
    assert query_domain(cfg, 1, 2) == (0, 1000)


def test_sweep_identity_and_seed():
    base = _cfg()
    (same,) = sweep_config(base, "shifting_rate", [base.periods[0].shifting_rate])
    assert same.to_dict() == base.to_dict()
    cfgs = sweep_config(base, "skewness", ["uniform", "zipf:3", "gaussian:1.5"])
    assert [c.periods[0].streams[0].distribution for c in cfgs] == ["uniform", "zipf", "gaussian"]
    assert cfgs[1].periods[0].streams[0].alpha == 3.0
    assert all(c.seed == base.seed for c in cfgs)
    assert sweep_config(base, "selectivity", []) == []
    with pytest.raises(ConfigError):
        sweep_config(base, "colour", [1])


def test_json_round_trip(tmp_path):
    cfg = dynamic_config(3)
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    back = WorkloadConfig.load(path)
    assert back.to_dict() == cfg.to_dict()
    assert np.array_equal(gen_batch_rows(back, 5), gen_batch_rows(cfg, 5))


@pytest.mark.parametrize("mutate", [
    lambda d: d["periods"][0].update(selectivity=0),
    lambda d: d["periods"][0].update(shifting_rate=1.5),
    lambda d: d["periods"][0].update(predicate_columns={"9": 1}),
    lambda d: d["periods"][0].update(predicate_columns={"0": -1}),
    lambda d: d.update(initial_pool_periods=1),
    lambda d: d.update(batches_per_period=0),
    lambda d: d["columns"][0].update(kind="color"),
    lambda d: d["periods"][0]["streams"][0].update(distribution="pareto"),
    lambda d: d.pop("columns"),
])
def test_invalid_configs_raise(mutate):
    d = json.loads(_cfg().to_json())
    mutate(d)
    with pytest.raises(ConfigError):
        WorkloadConfig.from_dict(d)


def test_bad_json_raises():
    with pytest.raises(ConfigError):
        WorkloadConfig.from_json("{not json")
