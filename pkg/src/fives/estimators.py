"""scikit-learn compatible wrappers around the search, the cross generator and the LR.

All estimators take ``X`` as integer category codes, one column per
categorical feature (what :class:`fives.data.Preprocessor` produces).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import EncodedTable
from .downstream import cross_codes, train_logistic_regression
from .graph import CrossFeature
from .pipeline import extract_crosses
from .search import SearchConfig, fit
from .validation import check_binary_target, check_codes, infer_cardinalities


def _table(X, y, cardinalities):
    return EncodedTable(X, y, cardinalities, [{} for _ in cardinalities])


class FIVESClassifier(ClassifierMixin, BaseEstimator):
    """Feature-graph classifier whose adjacency is learned on a held-out slice.

    ``fit`` carves ``val_fraction`` of the rows off as the validation set
    for the adjacency updates unless ``X_val``/``y_val`` are passed.
    ``predict_proba`` averages the per-layer heads.
    """

    def __init__(
        self,
        K=2,
        embed_dim=8,
        lr_theta=5e-3,
        lr_arch=5e-3,
        epochs=10,
        batch_size=128,
        weight_decay=1e-4,
        dropout=0.3,
        tau_start=1.0,
        tau_end=0.02,
        tau_schedule="linear",
        anneal=True,
        thresholds=0.5,
        adjacency_mode="recursive",
        val_fraction=0.1,
        random_state=0,
    ):
        self.K = K
        self.embed_dim = embed_dim
        self.lr_theta = lr_theta
        self.lr_arch = lr_arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.dropout = dropout
        self.tau_start = tau_start
        self.tau_end = tau_end
        self.tau_schedule = tau_schedule
        self.anneal = anneal
        self.thresholds = thresholds
        self.adjacency_mode = adjacency_mode
        self.val_fraction = val_fraction
        self.random_state = random_state

    def _config(self):
        return SearchConfig(
            K=self.K,
            d=self.embed_dim,
            lr_theta=self.lr_theta,
            lr_arch=self.lr_arch,
            epochs=self.epochs,
            batch_size=self.batch_size,
            weight_decay=self.weight_decay,
            dropout=self.dropout,
            tau_start=self.tau_start,
            tau_end=self.tau_end,
            tau_schedule=self.tau_schedule,
            anneal=self.anneal,
            thresholds=self.thresholds,
            adjacency_mode=self.adjacency_mode,
            seed=int(self.random_state or 0),
        )

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_codes(X, min_features=2)
        self.classes_, yy = check_binary_target(y)
        if X_val is None:
            if not 0.0 < self.val_fraction < 1.0:
                raise ValueError("val_fraction must lie in (0, 1)")
            perm = np.random.default_rng(self.random_state).permutation(len(X))
            n_val = max(1, int(len(X) * self.val_fraction))
            val_idx, tr_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
            X_tr, y_tr, X_va, y_va = X[tr_idx], yy[tr_idx], X[val_idx], yy[val_idx]
        else:
            X_va = check_codes(X_val, n_features=X.shape[1])
            y_va = np.searchsorted(self.classes_, np.asarray(y_val))
            X_tr, y_tr = X, yy
        self.cardinalities_ = infer_cardinalities(X_tr, X_va)
        self.n_features_in_ = X.shape[1]
        self.result_ = fit(_table(X_tr, y_tr, self.cardinalities_), _table(X_va, y_va, self.cardinalities_), self._config())
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "result_")
        X = check_codes(X, n_features=self.n_features_in_)
        if np.any(X >= np.asarray(self.cardinalities_)[None, :]):
            raise ValueError("X contains codes that were not seen during fit")
        p = self.result_.predict_proba(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        positive = self.predict_proba(X)[:, 1] >= 0.5
        return self.classes_[positive.astype(int)]

    def crosses(self, thresholds=None):
        """Explicit crosses read off the learned adjacency."""
        check_is_fitted(self, "result_")
        return extract_crosses(self.result_, thresholds)

    @property
    def adjacency_(self):
        check_is_fitted(self, "result_")
        return self.result_.soft_A.values


class CrossFeatureGenerator(TransformerMixin, BaseEstimator):
    """Append cross columns to integer-coded ``X``.

    Crosses come from ``crosses`` (a list of :class:`CrossFeature` or index
    tuples) or, when that is None, from fitting ``searcher`` (a
    :class:`FIVESClassifier`) and thresholding its adjacency at
    ``extraction_threshold``. Tuples unseen during ``fit`` map to one extra
    code per cross column.
    """

    def __init__(self, crosses=None, searcher=None, extraction_threshold=0.5):
        self.crosses = crosses
        self.searcher = searcher
        self.extraction_threshold = extraction_threshold

    def fit(self, X, y=None):
        X = check_codes(X)
        self.n_features_in_ = X.shape[1]
        if self.crosses is not None:
            members = [(c.anchor, *c.partners) if isinstance(c, CrossFeature) else tuple(c) for c in self.crosses]
        else:
            if y is None:
                raise ValueError("fitting a searcher needs labels")
            searcher = self.searcher if self.searcher is not None else FIVESClassifier()
            self.searcher_ = searcher.fit(X, y)
            members = [(c.anchor, *c.partners) for c in self.searcher_.crosses(self.extraction_threshold)]
        cards = infer_cardinalities(X)
        table = _table(X, np.zeros(len(X), dtype=np.int64), cards)
        self.cardinalities_ = cards
        self.members_ = members
        self.vocabs_ = [cross_codes(table, mem)[1] for mem in members]
        return self

    def transform(self, X):
        check_is_fitted(self, "vocabs_")
        X = check_codes(X, n_features=self.n_features_in_)
        cards = tuple(max(c, int(v) + 1) for c, v in zip(self.cardinalities_, X.max(axis=0, initial=0)))
        table = _table(X, np.zeros(len(X), dtype=np.int64), cards)
        extra = [cross_codes(table, mem, vocab)[0][:, None] for mem, vocab in zip(self.members_, self.vocabs_)]
        return np.hstack([X, *extra]) if extra else X.copy()


class L1LogisticRegression(ClassifierMixin, BaseEstimator):
    """Logistic regression on one-hot categories with an L1 penalty ``l1 * ||w||_1``.

    The log-loss is summed over samples (not averaged), matching the usual
    ``C = 1 / l1`` convention. Codes at or above a column's fitted cardinality
    contribute nothing at prediction time.
    """

    def __init__(self, l1=1.0, max_iter=100, tol=1e-6):
        self.l1 = l1
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X = check_codes(X)
        self.classes_, yy = check_binary_target(y)
        self.n_features_in_ = X.shape[1]
        self.cardinalities_ = infer_cardinalities(X)
        self.model_ = train_logistic_regression(X, yy, self.cardinalities_, self.l1, self.max_iter, self.tol)
        self.n_iter_ = self.model_.n_iter
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.decision_function(check_codes(X, n_features=self.n_features_in_))

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        p = self.model_.predict_proba(check_codes(X, n_features=self.n_features_in_))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        positive = self.decision_function(X) >= 0
        return self.classes_[positive.astype(int)]

    @property
    def coef_(self):
        check_is_fitted(self, "model_")
        return self.model_.coef[None, :]

    @property
    def intercept_(self):
        check_is_fitted(self, "model_")
        return np.array([self.model_.bias])
