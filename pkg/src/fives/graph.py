"""Adjacency logits, the layer-wise adjacency tensor and explicit cross features."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffcore as dc

ADJACENCY_FORMAT_VERSION = 1
DEFAULT_THRESHOLD = 0.5


class CrossCapError(RuntimeError):
    def __init__(self, count, cap, fan_out):
        self.count, self.cap, self.fan_out = count, cap, fan_out
        super().__init__(f"{count} crosses exceed cap {cap}; active edges per layer: {fan_out}")


def init_logits(K, m, fill=0.0):
    """H with slice 0 pinned to the identity, expressed as logits."""
    if K < 1 or m < 1:
        raise ValueError("need K >= 1 and m >= 1")
    H = np.full((K, m, m), float(fill))
    H[0] = dc.logit(np.eye(m))
    return H


def layer_thresholds(thresholds, K):
    """Normalize a scalar or per-layer sequence to a length-K list (slot 0 unused)."""
    if thresholds is None:
        thresholds = DEFAULT_THRESHOLD
    if np.isscalar(thresholds):
        out = [float(thresholds)] * K
    else:
        seq = [float(t) for t in thresholds]
        if len(seq) == K - 1:
            seq = [DEFAULT_THRESHOLD] + seq
        if len(seq) != K:
            raise ValueError(f"expected {K - 1} per-layer thresholds, got {len(seq)}")
        out = seq
    if any(not 0.0 < t <= 1.0 for t in out[1:]):
        raise ValueError("thresholds must lie in (0, 1]")
    return out


def phi(slice_values, threshold):
    return (np.asarray(slice_values) >= threshold).astype(np.float64)


@dataclass
class AdjTensor:
    values: np.ndarray  # (K, m, m)
    binarized: bool = False

    @property
    def K(self):
        return self.values.shape[0]

    @property
    def m(self):
        return self.values.shape[1]

    def slice(self, k):
        return self.values[k]


def adjacency_slices(H, thresholds=None, mode="recursive", straight_through=False):
    """Soft adjacency slices A^(0..K-1) from logits ``H``.

    Works on a plain array or on a recorded :class:`~fives.diffcore.Var`.
    In recursive mode A^(k) = D^-1 phi(A^(k-1)) sigmoid(H^(k)), where phi
    thresholds the previous soft slice and D is its row degree (zero rows
    count as degree 1). phi is a constant for the gradient unless
    ``straight_through`` is set.
    """
    K, m = dc._value(H).shape[:2]
    ths = layer_thresholds(thresholds, K)
    slices = [np.eye(m)]
    for k in range(1, K):
        gate = dc.sigmoid(dc.getitem(H, k))
        if mode == "independent":
            slices.append(gate)
            continue
        if mode != "recursive":
            raise ValueError(f"unknown adjacency mode {mode!r}")
        prev = slices[-1]
        binary = phi(dc._value(prev), ths[k - 1]) if k > 1 else np.eye(m)
        degree = binary.sum(axis=1)
        degree[degree == 0] = 1.0
        if straight_through and isinstance(prev, dc.Var):
            carrier = dc.add(prev, binary - prev.value)
        else:
            carrier = binary
        slices.append(dc.einsum("ij,jl->il", dc.mul(carrier, 1.0 / degree[:, None]), gate))
    return slices


def compute_soft_adjacency(H, thresholds=None, straight_through=False):
    return AdjTensor(np.stack(adjacency_slices(np.asarray(H, dtype=np.float64), thresholds)))


def compute_independent_adjacency(H, thresholds=None):
    return AdjTensor(np.stack(adjacency_slices(np.asarray(H, dtype=np.float64), thresholds, mode="independent")))


def rescale_slice(a, tau):
    """sigma(logit(a) / tau), differentiable in ``a``."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if tau == 1.0:
        return a
    return dc.sigmoid(dc.mul(dc.logit(a), 1.0 / tau))


def rescale(A, tau):
    if isinstance(A, AdjTensor):
        out = [A.values[0]] + [rescale_slice(A.values[k], tau) for k in range(1, A.K)]
        return AdjTensor(np.stack(out), A.binarized)
    return [A[0]] + [rescale_slice(a, tau) for a in A[1:]]


def binarize(A, thresholds=None):
    values = A.values if isinstance(A, AdjTensor) else np.asarray(A)
    K = values.shape[0]
    ths = layer_thresholds(thresholds, K)
    out = np.empty_like(values, dtype=np.float64)
    out[0] = np.eye(values.shape[1])
    for k in range(1, K):
        out[k] = phi(values[k], ths[k])
    return AdjTensor(out, binarized=True)


@dataclass(frozen=True)
class TemperatureSchedule:
    tau_start: float = 1.0
    tau_end: float = 0.02
    total_steps: int = 1
    shape: str = "linear"

    def __post_init__(self):
        if not self.tau_start >= self.tau_end > 0:
            raise ValueError("need tau_start >= tau_end > 0")
        if self.shape not in ("linear", "exponential"):
            raise ValueError(f"unknown schedule shape {self.shape!r}")

    def __call__(self, step):
        if self.total_steps <= 0:
            return self.tau_end
        frac = min(max(step / self.total_steps, 0.0), 1.0)
        if frac == 1.0:
            return self.tau_end
        if self.shape == "linear":
            return self.tau_start + (self.tau_end - self.tau_start) * frac
        return self.tau_start * (self.tau_end / self.tau_start) ** frac


@dataclass(frozen=True)
class CrossFeature:
    anchor: int
    partners: tuple
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "partners", tuple(int(p) for p in self.partners))
        idx = (self.anchor, *self.partners)
        if len(set(idx)) != len(idx):
            raise ValueError(f"cross {idx} repeats an original feature")
        if not self.partners:
            raise ValueError("a cross needs at least one partner")

    @property
    def order(self):
        return len(self.partners) + 1

    @property
    def members(self):
        return tuple(sorted((self.anchor, *self.partners)))

    def label(self, names):
        return "&".join(names[i] for i in (self.anchor, *self.partners))


def derive_cross_features(A, max_order=None, dedupe=True, soft=None, cap=100_000):
    """Enumerate crosses f_i x f_c1 x ... x f_c(k-1) with A^(l)[i, c_l] = 1.

    Paths that revisit a feature are skipped. Scores are products of the
    matching ``soft`` entries (1.0 when no soft tensor is given). With
    ``dedupe`` crosses over the same feature set collapse to the best-scored one.
    """
    values = A.values if isinstance(A, AdjTensor) else np.asarray(A)
    K, m = values.shape[:2]
    max_order = K if max_order is None else min(max_order, K)
    soft_values = None if soft is None else (soft.values if isinstance(soft, AdjTensor) else np.asarray(soft))
    active = [[np.flatnonzero(values[k][i] >= 0.5) for i in range(m)] for k in range(K)]
    fan_out = [int(sum(len(a) for a in layer)) for layer in active[1:]]

    # upper bound on emitted paths before enumerating
    bound = 0
    for i in range(m):
        paths = 1
        for k in range(1, max_order):
            paths *= len(active[k][i])
            bound += paths
    if bound > cap:
        raise CrossCapError(bound, cap, fan_out)

    crosses = []

    def extend(anchor, partners, score, layer):
        if layer >= max_order:
            return
        for c in active[layer][anchor]:
            if c == anchor or c in partners:
                continue
            s = score * (1.0 if soft_values is None else float(soft_values[layer][anchor, c]))
            path = partners + (int(c),)
            crosses.append(CrossFeature(anchor, path, s))
            extend(anchor, path, s, layer + 1)

    for i in range(m):
        extend(i, (), 1.0, 1)
    crosses.sort(key=lambda c: (c.order, c.anchor, c.partners))
    if not dedupe:
        return crosses
    best = {}
    for c in crosses:
        kept = best.get(c.members)
        if kept is None or c.score > kept.score:
            best[c.members] = c
    return sorted(best.values(), key=lambda c: (c.order, c.anchor, c.partners))


def enumerate_paths_bruteforce(A, max_order=None):
    """Reference enumeration over every (anchor, partner sequence) tuple."""
    values = A.values if isinstance(A, AdjTensor) else np.asarray(A)
    K, m = values.shape[:2]
    max_order = K if max_order is None else min(max_order, K)
    out = set()
    for order in range(2, max_order + 1):
        for tup in itertools.product(range(m), repeat=order):
            if len(set(tup)) != order:
                continue
            anchor, partners = tup[0], tup[1:]
            if all(values[l + 1][anchor, c] == 1 for l, c in enumerate(partners)):
                out.add((anchor, partners))
    return out


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def adjacency_to_dict(soft, binarized, thresholds, names=None, extra=None):
    payload = {
        "format_version": ADJACENCY_FORMAT_VERSION,
        "K": soft.K,
        "m": soft.m,
        "thresholds": layer_thresholds(thresholds, soft.K),
        "soft_A": soft.values.tolist(),
        "binarized_A": binarized.values.tolist(),
    }
    if names is not None:
        payload["feature_names"] = list(names)
    payload.update(extra or {})
    return payload


def save_adjacency(path, soft, binarized, thresholds, names=None, extra=None):
    Path(path).write_text(json.dumps(adjacency_to_dict(soft, binarized, thresholds, names, extra), indent=1))


def load_adjacency(path):
    payload = json.loads(Path(path).read_text())
    if payload.get("format_version") != ADJACENCY_FORMAT_VERSION:
        raise ValueError(f"unsupported adjacency format_version {payload.get('format_version')!r}")
    soft = AdjTensor(np.asarray(payload["soft_A"], dtype=np.float64))
    binarized = AdjTensor(np.asarray(payload["binarized_A"], dtype=np.float64), binarized=True)
    return soft, binarized, payload


CROSS_CSV_HEADER = ("order", "anchor_name", "partner_names", "score")


def write_crosses_csv(path, crosses, names):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CROSS_CSV_HEADER)
        for c in crosses:
            writer.writerow([c.order, names[c.anchor], "|".join(names[p] for p in c.partners), repr(float(c.score))])


def read_crosses_csv(path, names):
    index = {n: i for i, n in enumerate(names)}
    crosses = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CROSS_CSV_HEADER:
            raise ValueError(f"{path}: expected header {CROSS_CSV_HEADER}, got {reader.fieldnames}")
        for row in reader:
            try:
                partners = tuple(index[p] for p in row["partner_names"].split("|"))
                cross = CrossFeature(index[row["anchor_name"]], partners, float(row["score"]))
            except KeyError as exc:
                raise ValueError(f"{path}: unknown feature name {exc}") from None
            if cross.order != int(row["order"]):
                raise ValueError(f"{path}: order column disagrees with partner list for {row}")
            crosses.append(cross)
    return crosses


def cross_count_bound(m, K):
    """Number of ordered, repetition-free paths of orders 2..K (for sizing caps)."""
    return sum(m * math.perm(m - 1, k - 1) for k in range(2, K + 1))
