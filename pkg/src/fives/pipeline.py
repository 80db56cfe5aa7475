"""FIVES+LR: crosses read off a searched adjacency, fed with the originals to an L1 LR."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .data import concat_tables
from .downstream import auc, fit_lr_table, materialize_crosses, per_feature_auc
from .graph import derive_cross_features
from .search import architecture_from_logits

DEFAULT_CANDIDATES = (0.5, 0.6, 0.7, 0.8, 0.9)
DEFAULT_L1_GRID = (1.0, 3.0, 10.0)


def extract_crosses(result, thresholds=None, dedupe=True, cap=100_000):
    """Crosses implied by a search result at the given (per-layer) thresholds."""
    soft, binary = architecture_from_logits(result.params["H"], result.config, thresholds)
    return derive_cross_features(binary, dedupe=dedupe, soft=soft, cap=cap)


def lr_with_crosses(train, evaluation, crosses, l1=1.0, max_iter=100, tol=1e-6, max_cardinality=None):
    """Fit LR on ``train`` + crosses and score ``evaluation``.

    Cross vocabularies are built over both tables together, the same
    dataset-level convention the preprocessing uses; tuples that only occur in
    ``evaluation`` get a weight of zero since the LR never sees them.
    """
    joint = materialize_crosses(concat_tables([train, evaluation]), crosses, max_cardinality)
    n = train.n_rows
    tr = joint.take(np.arange(n))
    ev = joint.take(np.arange(n, joint.n_rows))
    model = fit_lr_table(tr, l1, max_iter, tol)
    scores = model.predict_proba(ev.codes)
    return auc(scores, ev.labels), model, scores


class Selection(NamedTuple):
    threshold: float | None
    l1: float
    crosses: list
    val_auc: float
    table: list


def select_l1(train, val, crosses=(), l1_grid=DEFAULT_L1_GRID, **lr_kwargs):
    """L1 strength with the best validation AUC for a fixed cross set; ties go to the stronger penalty."""
    best = None
    for l1 in sorted(l1_grid):
        score = lr_with_crosses(train, val, list(crosses), l1=l1, **lr_kwargs)[0]
        if best is None or score >= best[1]:
            best = (l1, score)
    return best


def select_extraction_threshold(result, train, val, candidates=DEFAULT_CANDIDATES, l1_grid=(1.0,), **lr_kwargs):
    """Pick the extraction threshold (and L1 strength) with the best validation AUC.

    Every threshold is paired with every ``l1_grid`` value. Ties go to the
    larger threshold (fewer crosses), then to the stronger penalty. Returns a
    :class:`Selection` whose ``table`` rows are ``(threshold, l1, n_crosses, val_auc)``.
    """
    table = []
    best = None
    for th in sorted(candidates):
        crosses = extract_crosses(result, th)
        for l1 in sorted(l1_grid):
            score, _, _ = lr_with_crosses(train, val, crosses, l1=l1, **lr_kwargs)
            table.append((th, l1, len(crosses), score))
            if best is None or score >= best.val_auc:
                best = Selection(th, l1, crosses, score, table)
    return best


def evaluation_report(pipeline, score, crosses, table):
    """JSON-ready report; ``solo_auc`` is each cross's single-feature AUC on ``table``."""
    per_cross = []
    for c in crosses:
        try:
            solo = per_feature_auc(c, table)
        except ValueError:
            solo = None
        per_cross.append(
            {"members": [table.names[i] for i in (c.anchor, *c.partners)], "score": float(c.score), "solo_auc": solo}
        )
    return {"pipeline": pipeline, "auc": float(score), "n_crosses": len(crosses), "per_cross": per_cross}
