"""Simulated micro-partitioned tables and workload-aware reclustering policies."""

from ._validation import IntegrityError, NotFittedError, SchemaError, UsageError
from .baselines import (DepthDriven, FullQdTree, Greedy, GreedyAdjusted, NewDataSorted, NoRecluster,
                        OracleSorted, avg_metrics, partition_max_depth)
from .greedy import AdjustedGreedy, AuditError, PotentialAudit, audit_trace, greedy_query_step
from .harness import POLICIES, RunReport, audit, compare, make_policy, run, sweep
from .layout import CosineDBSCAN, HilbertOrder, QdTreeLayout, SortLayout, assign_layouts, hilbert_index
from .policy import SlidingWindow, adapt_window, plan_recluster, plan_recluster_standard
from .query import RangeQuery, execute, full_scan_oracle, prune
from .table import Layout, MicroPartition, Table, TableSnapshot
from .wair import WairPolicy, wair_variant
from .workload import ConfigError, WorkloadConfig, generate_trace, sweep_config

__version__ = "0.1.0"
