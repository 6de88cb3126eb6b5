"""Exceptions and input validation helpers shared by the estimators and the simulator."""

import numpy as np


class SchemaError(ValueError):
    """Rows or predicates do not match the table schema."""


class IntegrityError(RuntimeError):
    """A reclustering changed the row multiset it was supposed to preserve."""


class UsageError(ValueError):
    """An operation was called outside its contract (e.g. utilization of a pruned partition)."""


class NotFittedError(RuntimeError):
    pass


def check_rows(X, n_columns=None, allow_empty=False):
    """Return ``X`` as a C-contiguous 2-D int64 array, validating the column count."""
    arr = np.asarray(X)
    if arr.ndim == 1 and n_columns == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise SchemaError(f"rows must be 2-D, got shape {arr.shape}")
    if arr.shape[0] == 0 and not allow_empty:
        raise SchemaError("rows must be non-empty")
    if n_columns is not None and arr.shape[1] != n_columns:
        raise SchemaError(f"expected {n_columns} columns, got {arr.shape[1]}")
    if arr.shape[1] < 1:
        raise SchemaError("a table needs at least one column")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or not np.all(arr == np.round(arr)):
            raise SchemaError("column values must be integers")
    elif arr.dtype.kind not in "iub":
        raise SchemaError(f"unsupported dtype {arr.dtype}")
    return np.ascontiguousarray(arr, dtype=np.int64)


def check_column(column, n_columns):
    if not (0 <= int(column) < n_columns):
        raise SchemaError(f"unknown column {column} (table has {n_columns})")
    return int(column)


def check_is_fitted(estimator, attribute):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first")


def lexsorted(rows):
    """Rows sorted lexicographically (column 0 most significant); used for multiset checks."""
    if len(rows) == 0:
        return rows
    order = np.lexsort(rows.T[::-1])
    return rows[order]


def same_multiset(a, b):
    if a.shape != b.shape:
        return False
    return bool(np.array_equal(lexsorted(a), lexsorted(b)))
