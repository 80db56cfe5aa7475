"""Cross materialization, L1 logistic regression, AUC and the baseline selectors."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.stats import rankdata

from .data import EncodedTable
from .graph import CrossFeature


class MetricError(ValueError):
    pass


class DegenerateDataError(ValueError):
    pass


class CardinalityCapError(ValueError):
    pass


# ---------------------------------------------------------------------------
# AUC
# ---------------------------------------------------------------------------


def auc(scores, labels):
    """Area under the ROC curve by rank summation; tied scores share average ranks."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise MetricError("scores and labels differ in shape")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes present")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# crosses
# ---------------------------------------------------------------------------


@dataclass
class CrossColumn:
    members: tuple
    codes: np.ndarray
    cardinality: int
    vocab: dict  # tuple of member codes -> cross code
    provenance: object = None


def cross_codes(table, members, vocab=None):
    """Dense codes for the tuple of member codes in each row.

    With a given ``vocab`` the mapping is frozen and unseen tuples get code
    ``len(vocab)`` (one past the last known code).
    """
    members = tuple(members)
    if len(set(members)) != len(members) or len(members) < 2:
        raise ValueError(f"a cross needs at least two distinct features, got {members}")
    sub = table.codes[:, members]
    # collapse each tuple to one integer key, then densify in first-appearance order
    radix = np.asarray(table.cardinalities, dtype=np.int64)[list(members)]
    if math.prod(int(r) for r in radix) < 2**62:
        keys = np.zeros(len(sub), dtype=np.int64)
        for j, r in enumerate(radix):
            keys = keys * r + sub[:, j]
        tuples = None
    else:
        keys = None
        tuples = [tuple(row) for row in sub.tolist()]
    if vocab is None:
        if keys is not None:
            uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
            order = np.argsort(first, kind="stable")
            rank = np.empty_like(order)
            rank[order] = np.arange(len(order))
            codes = rank[inverse].astype(np.int64)
            vocab = {tuple(int(v) for v in sub[first[o]]): int(i) for i, o in enumerate(order)}
        else:
            vocab = {}
            codes = np.fromiter((vocab.setdefault(t, len(vocab)) for t in tuples), dtype=np.int64, count=len(tuples))
        return codes, vocab
    unseen = len(vocab)
    rows = tuples if tuples is not None else [tuple(r) for r in sub.tolist()]
    codes = np.fromiter((vocab.get(t, unseen) for t in rows), dtype=np.int64, count=len(rows))
    return codes, vocab


def _cross_name(table, members):
    return "&".join(table.names[i] for i in members)


def materialize_crosses(table, crosses, max_cardinality=None):
    """Append one categorical column per cross; original columns are kept as-is."""
    columns = [table.codes]
    cards = list(table.cardinalities)
    vocabs = list(table.vocab_maps)
    names = list(table.names)
    for cross in crosses:
        members = (cross.anchor, *cross.partners) if isinstance(cross, CrossFeature) else tuple(cross)
        if max(members) >= table.n_features or min(members) < 0:
            raise IndexError(f"cross {members} refers to a column outside the table")
        codes, vocab = cross_codes(table, members)
        if max_cardinality is not None and len(vocab) > max_cardinality:
            raise CardinalityCapError(f"cross {_cross_name(table, members)} has {len(vocab)} values > cap {max_cardinality}")
        columns.append(codes[:, None])
        cards.append(len(vocab))
        vocabs.append({"|".join(str(v) for v in key): code for key, code in vocab.items()})
        names.append(_cross_name(table, members))
    return EncodedTable(np.hstack(columns), table.labels, cards, vocabs, names)


# ---------------------------------------------------------------------------
# L1 logistic regression
# ---------------------------------------------------------------------------


def one_hot(codes, cardinalities):
    """CSR one-hot design matrix; codes >= cardinality (unseen) produce empty cells."""
    codes = np.asarray(codes, dtype=np.int64)
    n, m = codes.shape
    offsets = np.concatenate([[0], np.cumsum(cardinalities)[:-1]]).astype(np.int64)
    known = codes < np.asarray(cardinalities)[None, :]
    rows = np.repeat(np.arange(n), m).reshape(n, m)[known]
    cols = (codes + offsets[None, :])[known]
    data = np.ones(len(cols))
    return sparse.csr_matrix((data, (rows, cols)), shape=(n, int(sum(cardinalities))))


def _log1pexp(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class LRModel:
    weights: list  # one array per input column, length = its cardinality
    bias: float
    l1: float
    n_iter: int
    tol: float
    objective_trace: list = field(default_factory=list)

    @property
    def coef(self):
        return np.concatenate(self.weights) if self.weights else np.zeros(0)

    def decision_function(self, codes):
        codes = np.asarray(codes, dtype=np.int64)
        z = np.full(len(codes), self.bias)
        for j, w in enumerate(self.weights):
            c = codes[:, j]
            seen = c < len(w)
            z[seen] += w[c[seen]]
        return z

    def predict_proba(self, codes):
        return _sigmoid(self.decision_function(codes))


def _objective(margin, y, weights, l1):
    return float(np.sum(_log1pexp(margin) - y * margin) + l1 * sum(np.abs(w).sum() for w in weights))


def train_logistic_regression(codes, labels, cardinalities, l1=1.0, max_iter=100, tol=1e-6):
    """L1-penalized logistic regression over one-hot encoded categorical columns.

    Minimizes ``sum_i logloss_i + l1 * ||w||_1`` (bias unpenalized) by block
    proximal gradient: one block per input column, whose one-hot indicators
    touch disjoint rows, so each category gets its own fixed step
    ``4 / count``. That step comes from the 1/4 curvature bound of the
    logistic loss, so every sweep is non-increasing in the objective.
    Iteration stops after ``max_iter`` sweeps or once the objective changes by
    less than ``tol`` relative to its magnitude.
    """
    codes = np.asarray(codes, dtype=np.int64)
    y = np.asarray(labels, dtype=np.float64)
    if len(y) == 0:
        raise DegenerateDataError("empty training table")
    prior = y.mean()
    if prior in (0.0, 1.0):
        raise DegenerateDataError("training labels contain a single class")
    m = codes.shape[1]
    counts = [np.bincount(codes[:, j], minlength=cardinalities[j]).astype(np.float64) for j in range(m)]
    weights = [np.zeros(int(c)) for c in cardinalities]
    bias = math.log(prior / (1.0 - prior))
    margin = np.full(len(y), bias)
    trace = [_objective(margin, y, weights, l1)]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        resid = _sigmoid(margin) - y
        bias_step = 4.0 * resid.sum() / len(y)
        bias -= bias_step
        margin -= bias_step
        for j in range(m):
            resid = _sigmoid(margin) - y
            c = codes[:, j]
            grad = np.bincount(c, weights=resid, minlength=len(weights[j]))
            step = 4.0 / np.maximum(counts[j], 1.0)
            old = weights[j]
            target = old - step * grad
            new = np.sign(target) * np.maximum(np.abs(target) - step * l1, 0.0)
            new[counts[j] == 0] = 0.0
            margin += (new - old)[c]
            weights[j] = new
        trace.append(_objective(margin, y, weights, l1))
        if abs(trace[-2] - trace[-1]) <= tol * max(1.0, abs(trace[-1])):
            break
    return LRModel(weights, float(bias), l1, n_iter, tol, trace)


def fit_lr_table(table, l1=1.0, max_iter=100, tol=1e-6):
    return train_logistic_regression(table.codes, table.labels, table.cardinalities, l1, max_iter, tol)


# ---------------------------------------------------------------------------
# baselines and diagnostics
# ---------------------------------------------------------------------------


def plugin_mutual_information(x, y):
    """Empirical I(X; Y) in nats from two integer-coded samples."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    n = len(x)
    if n == 0:
        return 0.0
    _, xi = np.unique(x, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    ny = yi.max() + 1
    joint = np.bincount(xi * ny + yi).astype(np.float64)
    nz = np.flatnonzero(joint)
    n_xy = joint[nz]
    n_x = np.bincount(xi).astype(np.float64)[nz // ny]
    n_y = np.bincount(yi).astype(np.float64)[nz % ny]
    return float(np.sum(n_xy / n * np.log(n_xy * n / (n_x * n_y))))


def cmi_rank_pairs(table, top_n):
    """Top pairs (i, j) by plug-in I(f_i x f_j; Y); ties keep (i, j) order."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    scored = []
    for i, j in itertools.combinations(range(table.n_features), 2):
        codes, _ = cross_codes(table, (i, j))
        scored.append((plugin_mutual_information(codes, table.labels), i, j))
    # mathematically equal scores can differ in the last bits; compare at 1e-12
    # so the (i, j) tie-break is not decided by rounding noise
    scored.sort(key=lambda t: (-round(t[0], 12), t[1], t[2]))
    return [CrossFeature(i, (j,), mi) for mi, i, j in scored[:top_n]]


def _subsets_by_rank(m, max_order):
    for k in range(2, max_order + 1):
        yield from itertools.combinations(range(m), k)


def random_cross_baseline(m, count, max_order, seed):
    """Distinct feature subsets of size 2..max_order drawn uniformly without replacement."""
    if count < 1 or max_order < 2:
        raise ValueError("need count >= 1 and max_order >= 2")
    max_order = min(max_order, m)
    total = sum(math.comb(m, k) for k in range(2, max_order + 1))
    if count > total:
        warnings.warn(f"requested {count} random crosses but only {total} subsets exist; returning all")
        count = total
    rng = np.random.default_rng(seed)
    if total <= 2_000_000:
        pool = list(_subsets_by_rank(m, max_order))
        picks = [pool[i] for i in rng.choice(total, size=count, replace=False)]
    else:
        sizes = np.arange(2, max_order + 1)
        weights = np.array([math.comb(m, k) for k in sizes], dtype=np.float64)
        seen, picks = set(), []
        while len(picks) < count:
            k = int(rng.choice(sizes, p=weights / weights.sum()))
            subset = tuple(sorted(int(v) for v in rng.choice(m, size=k, replace=False)))
            if subset not in seen:
                seen.add(subset)
                picks.append(subset)
    return [CrossFeature(s[0], s[1:], 0.0) for s in picks]


def category_positive_rate(codes, labels, alpha=1.0):
    """Laplace-smoothed P(y = 1 | category) looked up per row."""
    codes = np.asarray(codes, dtype=np.int64)
    y = np.asarray(labels, dtype=np.float64)
    pos = np.bincount(codes, weights=y)
    tot = np.bincount(codes).astype(np.float64)
    return ((pos + alpha) / (tot + 2.0 * alpha))[codes]


def per_feature_auc(cross, table):
    """AUC of predicting the label from a single cross's category positive rate."""
    members = (cross.anchor, *cross.partners) if isinstance(cross, CrossFeature) else tuple(cross)
    if len(members) == 1:
        codes = table.codes[:, members[0]]
    else:
        codes, _ = cross_codes(table, members)
    return auc(category_positive_rate(codes, table.labels), table.labels)
