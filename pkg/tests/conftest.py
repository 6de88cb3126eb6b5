import numpy as np
import pytest

from reclusterkit.table import Table


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_table(rows, capacity=4, verify=True):
    rows = np.asarray(rows, dtype=np.int64)
    t = Table(rows.shape[1], capacity, verify=verify)
    t.ingest_batch(rows)
    return t


def table_from_ranges(ranges, rows_per=4, column_count=1):
    """One partition per ``(lo, hi)`` on column 0, each spanning exactly its range."""
    t = Table(column_count, rows_per)
    for lo, hi in ranges:
        keys = np.linspace(lo, hi, rows_per).round().astype(np.int64)
        keys[0], keys[-1] = lo, hi
        rows = np.zeros((rows_per, column_count), dtype=np.int64)
        rows[:, 0] = keys
        t.ingest_batch(rows)
    return t


ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
