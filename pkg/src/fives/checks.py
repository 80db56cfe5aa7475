"""Finite-difference verification of the full feature-graph loss on toy instances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .graph import init_logits
from .model import ModelShape, forward_full, init_params


@dataclass
class ToyConfig:
    m: int = 3
    d: int = 2
    K: int = 2
    n_rows: int = 4
    tau: float = 0.5
    h: float = 1e-5
    n_instances: int = 4
    adjacency_mode: str = "recursive"
    thresholds: float = 0.5

    @classmethod
    def from_dict(cls, payload):
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown gradcheck config keys: {sorted(unknown)}")
        return cls(**payload)


def toy_problem(config, seed):
    """A random small table, parameters and non-trivial adjacency logits."""
    rng = np.random.default_rng(seed)
    cards = tuple(int(c) for c in rng.integers(2, 4, size=config.m))
    codes = np.column_stack([rng.integers(0, c, size=config.n_rows) for c in cards])
    labels = rng.integers(0, 2, size=config.n_rows)
    labels[:2] = (0, 1)
    shape = ModelShape(cards, config.d, config.K)
    store = init_params(shape, rng)
    H = init_logits(config.K, config.m)
    H[1:] = rng.normal(0.0, 1.0, size=H[1:].shape)
    store.add("H", H)
    return codes, labels, shape, store


def toy_loss_fn(codes, labels, shape, config):
    def loss_fn(store):
        return forward_full(
            codes, labels, store, shape, H=store.var("H"), tau=config.tau, dropout=0.0,
            thresholds=config.thresholds, mode=config.adjacency_mode,
        ).loss

    return loss_fn


def fives_gradcheck(config=None, seed=0):
    """Check every coordinate of ``n_instances`` toy problems; worst error per parameter group.

    Returns a :class:`diffcore.GradCheckReport` merged across instances.
    """
    config = config or ToyConfig()
    merged = dc.GradCheckReport(max_rel_error=0.0, n_checked=0)
    for i in range(config.n_instances):
        codes, labels, shape, store = toy_problem(config, seed * 1000 + i)
        rep = dc.finite_diff_check(toy_loss_fn(codes, labels, shape, config), store, h=config.h)
        merged.n_checked += rep.n_checked
        merged.max_rel_error = max(merged.max_rel_error, rep.max_rel_error)
        for name, worst in rep.per_param.items():
            if name not in merged.per_param or worst[0] >= merged.per_param[name][0]:
                merged.per_param[name] = worst
    return merged
