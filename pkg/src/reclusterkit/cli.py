"""Command line entry point: ``reclusterkit {generate,run,compare,sweep,audit}``."""

import argparse
import json
import os
import sys

from ._validation import IntegrityError
from .harness import POLICIES, audit, compare, comparison_rows, run, sweep, write_rows
from .workload import STOCK_CONFIGS, ConfigError, WorkloadConfig, generate_trace

EXIT_OK, EXIT_CONFIG, EXIT_INTEGRITY = 0, 1, 2


def load_config(spec, seed=None):
    """A stock config name or a JSON file; ``seed`` overrides the file's seed."""
    if spec in STOCK_CONFIGS:
        return STOCK_CONFIGS[spec](seed or 0)
    if not os.path.exists(spec):
        raise ConfigError(f"{spec!r} is neither a stock config ({', '.join(STOCK_CONFIGS)}) nor a file")
    try:
        cfg = WorkloadConfig.load(spec)
    except (json.JSONDecodeError, TypeError, KeyError) as exc:
        raise ConfigError(f"cannot read {spec}: {exc}") from exc
    if seed is not None:
        cfg.seed = seed
    return cfg.validate()


def _policies(text):
    names = [p.strip() for p in text.split(",") if p.strip()]
    bad = [p for p in names if p not in POLICIES]
    if bad:
        raise ConfigError(f"unknown policies {bad}; choose from {', '.join(POLICIES)}")
    return names


def _values(text):
    out = []
    for v in text.split(","):
        v = v.strip()
        try:
            out.append(float(v) if "." in v else int(v))
        except ValueError:
            out.append(v)
    return out


def cmd_generate(args, cfg):
    trace = generate_trace(cfg)
    with open(args.output, "w") as fh:
        trace.to_ndjson(fh)
    print(f"wrote {cfg.n_batches} batches to {args.output}")


def cmd_run(args, cfg):
    if args.policy not in POLICIES:
        raise ConfigError(f"unknown policy {args.policy!r}")
    rep = run(cfg, args.policy)
    rep.to_csv(args.output)
    state = rep.policy_state
    if hasattr(state, "write_decisions"):
        stem = os.path.splitext(args.output)[0]
        with open(stem + "_decisions.csv", "w", newline="") as fh:
            state.write_decisions(fh)
        with open(stem + "_layouts.csv", "w", newline="") as fh:
            state.write_layouts(fh)
    print(f"{rep.policy}: total {rep.total_cost:.4g} (query {rep.query_cost:.4g}, "
          f"recluster {rep.recluster_cost:.4g}), pruning {rep.mean_pruning_rate:.3f}")


def cmd_compare(args, cfg):
    os.makedirs(args.output, exist_ok=True)
    reports = compare(cfg, _policies(args.policies), match_budget=not args.no_budget_match)
    for name, rep in reports.items():
        rep.to_csv(os.path.join(args.output, f"{name}.csv"))
    rows = comparison_rows(reports)
    write_rows(rows, os.path.join(args.output, "summary.csv"))
    for r in rows:
        print(f"{r['policy']:>18}  total {r['total_cost']:.4g}  pruning {r['mean_pruning_rate']:.3f}"
              + (f"  speedup {r['speedup_vs_nr']:.2f}" if r["speedup_vs_nr"] != "" else ""))


def cmd_sweep(args, cfg):
    os.makedirs(args.output, exist_ok=True)
    cells = sweep(cfg, args.param, _values(args.values), _policies(args.policies))
    fields = ["parameter", "value", "policy", "mean_pruning_rate", "total_cost", "recluster_cost"]
    write_rows(cells, os.path.join(args.output, f"sweep_{args.param}.csv"), fields)
    print(f"{len(cells)} cells written")


def cmd_audit(args, cfg):
    reports = audit(cfg)
    fields = ["algorithm", "step", "op_kind", "column", "k", "delta_phi", "amortized_cost", "bound_value"]
    rows = [dict(r, algorithm=name) for name, rep in reports.items() for r in rep.rows]
    write_rows(rows, args.output, fields)
    bad = 0
    for name, rep in reports.items():
        v = rep.lemma_violations + (0 if rep.warm_ok else 1)
        bad += v
        print(f"{name}: {len(rep.rows)} reclusterings, max ratio {rep.max_lemma_ratio:.3f}, violations {v}")
    if bad:
        raise IntegrityError(f"{bad} bound violations")


def build_parser():
    p = argparse.ArgumentParser(prog="reclusterkit", description="Reclustering policy simulator.")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, default_out, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("config", help=f"JSON config path or one of: {', '.join(STOCK_CONFIGS)}")
        sp.add_argument("-o", "--output", default=default_out)
        sp.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        sp.set_defaults(func=func)
        return sp

    add("generate", cmd_generate, "trace.ndjson", "write the ingest/query trace")
    sp = add("run", cmd_run, "report.csv", "simulate one policy")
    sp.add_argument("--policy", default="WAIR")
    sp = add("compare", cmd_compare, "compare", "simulate several policies on the same trace")
    sp.add_argument("--policies", default="NR,NN,DD,QD,WAIR")
    sp.add_argument("--no-budget-match", action="store_true", help="run DD with its defaults")
    sp = add("sweep", cmd_sweep, "sweep", "vary one workload parameter")
    sp.add_argument("--param", required=True)
    sp.add_argument("--values", required=True)
    sp.add_argument("--policies", default="NN,DD,QD,WAIR")
    add("audit", cmd_audit, "audit.csv", "check the greedy potential bounds on a workload")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
