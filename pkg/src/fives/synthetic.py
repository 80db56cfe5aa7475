"""Synthetic categorical fixtures with known interaction structure."""

from __future__ import annotations

import numpy as np

from .data import EncodedTable


def make_xor(n_rows=2000, noise=0.05, n_distractors=0, seed=0):
    """Two balanced binary features whose XOR is the label.

    With probability ``noise`` a row's label is redrawn from a fair coin
    (so about ``noise / 2`` of the labels end up flipped). ``n_distractors``
    extra independent binary columns carry no signal.
    """
    rng = np.random.default_rng(seed)
    m = 2 + n_distractors
    codes = rng.integers(0, 2, size=(n_rows, m))
    labels = codes[:, 0] ^ codes[:, 1]
    corrupt = rng.random(n_rows) < noise
    labels = np.where(corrupt, rng.integers(0, 2, size=n_rows), labels)
    names = ["x1", "x2"] + [f"noise{i + 1}" for i in range(n_distractors)]
    vocab = [{"0": 0, "1": 1} for _ in range(m)]
    return EncodedTable(codes, labels, [2] * m, vocab, names)


def xor_bayes_auc(noise):
    """AUC of the ideal XOR scorer under :func:`make_xor`'s label corruption."""
    flip = noise / 2.0
    return (1.0 - flip) ** 2 + (1.0 - flip) * flip
