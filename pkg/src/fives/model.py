"""The feature-graph network: embeddings, layer-wise propagation and per-layer heads."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .graph import adjacency_slices, rescale

THETA_NAMES = ("W_F", "W_node", "W_head", "b_head")
PROB_CLIP = 1e-12


@dataclass(frozen=True)
class ModelShape:
    cardinalities: tuple
    d: int
    K: int

    @property
    def m(self):
        return len(self.cardinalities)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.cardinalities)[:-1]]).astype(np.int64)

    @property
    def vocab_size(self):
        return int(sum(self.cardinalities))

    def to_dict(self):
        return {"K": self.K, "m": self.m, "d": self.d, "cardinalities": list(self.cardinalities)}

    @classmethod
    def from_dict(cls, payload):
        return cls(tuple(payload["cardinalities"]), payload["d"], payload["K"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_params(shape, rng, store=None):
    """Fill a ParamStore with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights."""
    store = store if store is not None else dc.ParamStore()
    d, m, K = shape.d, shape.m, shape.K
    bound = 1.0 / np.sqrt(d)
    head_bound = 1.0 / np.sqrt(m * d)
    values = {
        "W_F": rng.uniform(-bound, bound, size=(shape.vocab_size, d)),
        "W_node": rng.uniform(-bound, bound, size=(m, d, d)),
        "W_head": rng.uniform(-head_bound, head_bound, size=(K, m * d)),
        "b_head": np.zeros(K),
    }
    for name, value in values.items():
        if name in store:
            store.params[name][...] = value
        else:
            store.add(name, value)
    return store


def embed_batch(codes, W_F, offsets):
    """n^(0): (B, m, d) embedding lookup; codes are per-column, offsets shift them into W_F."""
    codes = np.asarray(codes, dtype=np.int64)
    vocab = dc._value(W_F).shape[0]
    cards = np.diff(np.append(offsets, vocab))
    if codes.size and (codes.min() < 0 or np.any(codes.max(axis=0) >= cards)):
        raise IndexError("code outside its column's embedding vocabulary")
    rows = codes + offsets[None, :]
    return dc.take_rows(W_F, rows)


def node_messages(n0, W_node):
    """W_j n_j^(0) for every node j: (B, m, d)."""
    return dc.einsum("bje,jde->bjd", n0, W_node)


def propagate_layer(n_prev, messages, A_k, eps=1e-12):
    """n_i^(k) = weighted-mean_j(A_k[i, j], W_j n_j^(0)) * n_i^(k-1)."""
    p = dc.weighted_mean_aggregate(messages, A_k, eps)
    return dc.mul(p, n_prev)


def head_logit(n_k, W_row, b):
    B = dc._value(n_k).shape[0]
    flat = dc.reshape(n_k, (B, -1))
    return dc.add(dc.einsum("bf,f->b", flat, W_row), b)


def predict_head(n_k, W_row, b):
    """sigma(W^(k) . concat(n_1..n_m) + b^(k)) per sample."""
    return dc.sigmoid(head_logit(n_k, W_row, b))


def multi_head_loss(predictions, labels):
    """Cross-entropy averaged over samples and heads.

    ``predictions`` has shape (B, K); entries are clipped to [1e-12, 1 - 1e-12].
    """
    p = np.clip(np.asarray(predictions, dtype=np.float64), PROB_CLIP, 1.0 - PROB_CLIP)
    y = np.asarray(labels, dtype=np.float64)[:, None]
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


@dataclass
class ForwardOutput:
    loss: dc.Var
    logits: list  # per head, each (B,)

    @property
    def probabilities(self):
        return np.stack([dc.sigmoid(dc._value(z)) for z in self.logits], axis=1)


def forward_full(
    batch_codes,
    labels,
    params,
    shape,
    H=None,
    A=None,
    tau=1.0,
    dropout=0.0,
    rng=None,
    thresholds=None,
    mode="recursive",
    straight_through=False,
):
    """Record the full loss for one batch.

    Pass either adjacency logits ``H`` (a Var or array; the soft adjacency is
    built from it) or fixed slices ``A``. Slices k >= 1 are re-scaled at
    temperature ``tau`` before propagation; dropout (inverted) is applied to
    each propagated representation when ``dropout > 0``.
    """
    if (H is None) == (A is None):
        raise ValueError("pass exactly one of H or A")
    if H is not None:
        slices = adjacency_slices(H, thresholds, mode, straight_through)
    else:
        slices = list(A.values if hasattr(A, "values") else A)
    slices = rescale(slices, tau)
    K = shape.K
    if len(slices) != K:
        raise ValueError(f"adjacency has {len(slices)} slices, model expects K={K}")

    get = params.var if isinstance(params, dc.ParamStore) else params.__getitem__
    W_head, b_head = get("W_head"), get("b_head")

    n0 = embed_batch(batch_codes, get("W_F"), shape.offsets)
    logits = [head_logit(n0, dc.getitem(W_head, 0), dc.getitem(b_head, 0))]
    if K > 1:
        messages = node_messages(n0, get("W_node"))
        n = n0
        for k in range(1, K):
            n = propagate_layer(n, messages, slices[k])
            if dropout > 0.0:
                keep = (rng.random(dc._value(n).shape) >= dropout) / (1.0 - dropout)
                n = dc.mul(n, keep)
            logits.append(head_logit(n, dc.getitem(W_head, k), dc.getitem(b_head, k)))

    total = None
    for z in logits:
        term = dc.mean(dc.binary_cross_entropy_with_logits(z, labels))
        total = term if total is None else dc.add(total, term)
    loss = dc.mul(total, 1.0 / K)
    return ForwardOutput(loss, logits)


def predict_proba_heads(codes, params, shape, A_slices, batch_size=4096):
    """Per-head probabilities (N, K) with fixed (already re-scaled) adjacency slices."""
    plain = {n: params[n] for n in THETA_NAMES}
    out = []
    for start in range(0, len(codes), batch_size):
        chunk = codes[start:start + batch_size]
        dummy = np.zeros(len(chunk))
        fwd = forward_full(chunk, dummy, plain, shape, A=A_slices, tau=1.0)
        out.append(fwd.probabilities)
    if not out:
        return np.zeros((0, shape.K))
    return np.concatenate(out)
