"""FIVES: differentiable edge search over a feature graph for explicit cross features.

Modules: :mod:`fives.data` (ingest, discretize, encode, split), :mod:`fives.diffcore`
(gradient engine and optimizers), :mod:`fives.graph` (adjacency and crosses),
:mod:`fives.model` (the propagation network), :mod:`fives.search` (bilevel
search), :mod:`fives.downstream` (LR, AUC, baselines), :mod:`fives.theory`
(exact information-theoretic checks) and :mod:`fives.cli`.
"""

from .estimators import CrossFeatureGenerator, FIVESClassifier, L1LogisticRegression

__version__ = "0.1.0"

__all__ = ["FIVESClassifier", "CrossFeatureGenerator", "L1LogisticRegression", "__version__"]
