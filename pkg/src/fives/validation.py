"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, column_or_1d


def check_codes(X, n_features=None, min_features=1):
    """Integer category codes, shape (n_samples, n_features), all >= 0."""
    X = check_array(X, dtype=None, ensure_min_features=min_features)
    if not np.issubdtype(X.dtype, np.integer):
        as_int = X.astype(np.int64)
        if not np.array_equal(as_int, X):
            raise ValueError("expected integer category codes")
        X = as_int
    X = X.astype(np.int64, copy=False)
    if X.min(initial=0) < 0:
        raise ValueError("category codes must be non-negative")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


def check_binary_target(y):
    """Return (classes, y encoded as 0/1)."""
    y = column_or_1d(y, warn=True)
    classes, encoded = np.unique(y, return_inverse=True)
    if len(classes) != 2:
        raise ValueError(f"binary target required, got {len(classes)} classes")
    return classes, encoded.astype(np.int64)


def infer_cardinalities(*arrays):
    stacked = [a for a in arrays if a is not None and len(a)]
    return tuple(int(v) + 1 for v in np.max([a.max(axis=0) for a in stacked], axis=0))
