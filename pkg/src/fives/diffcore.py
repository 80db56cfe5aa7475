"""Dense float64 kernels, a small reverse-mode gradient engine and optimizers.

The engine is deliberately narrow: it covers the operations the feature-graph
model needs (broadcast arithmetic, two-operand einsum, gathers, a handful of
elementwise nonlinearities and reductions). Every kernel accepts either a
plain ``numpy.ndarray`` or a :class:`Var`; with arrays it just computes the
value, with a ``Var`` it also records how to push gradients back.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOGIT_EPS = 1e-12
# Set only by injected_gradient_bug(): makes backward() seed with -1 so every
# reported gradient has the wrong sign. Used to prove the checker can fail.
_GRADIENT_SIGN_BUG = False
CHECKPOINT_VERSION = 1


class NumericError(ArithmeticError):
    """Raised when a NaN or infinity shows up where it must not."""


class GradientContractError(ValueError):
    """Raised when backward is asked for something it cannot do."""


class DimensionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# recorded computation
# ---------------------------------------------------------------------------


class Var:
    """A node of a recorded computation.

    ``value`` is always a float64 ndarray. ``grad`` is filled by
    :func:`backward`. Leaves created by :meth:`ParamStore.var` remember the
    parameter name so gradients can be routed back into the store.
    """

    __slots__ = ("value", "grad", "parents", "backward_fn", "param_name")

    def __init__(self, value, parents=(), backward_fn=None, param_name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.param_name = param_name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        tag = f", param={self.param_name!r}" if self.param_name else ""
        return f"Var(shape={self.shape}{tag})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def sum(self, axis=None):
        return sum_(self, axis)


def _value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _is_var(*xs):
    return any(isinstance(x, Var) for x in xs)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _node(value, parents, backward_fn):
    return Var(value, tuple(parents), backward_fn)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def add(a, b):
    va, vb = _value(a), _value(b)
    out = va + vb
    if not _is_var(a, b):
        return out
    return _node(out, (a, b), lambda g: (_unbroadcast(g, va.shape), _unbroadcast(g, vb.shape)))


def sub(a, b):
    va, vb = _value(a), _value(b)
    out = va - vb
    if not _is_var(a, b):
        return out
    return _node(out, (a, b), lambda g: (_unbroadcast(g, va.shape), _unbroadcast(-g, vb.shape)))


def mul(a, b):
    va, vb = _value(a), _value(b)
    out = va * vb
    if not _is_var(a, b):
        return out
    return _node(
        out, (a, b), lambda g: (_unbroadcast(g * vb, va.shape), _unbroadcast(g * va, vb.shape))
    )


def div(a, b):
    va, vb = _value(a), _value(b)
    out = va / vb
    if not _is_var(a, b):
        return out
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / vb, va.shape), _unbroadcast(-g * out / vb, vb.shape)),
    )


def sigmoid(x):
    """Elementwise logistic function, stable for any finite input."""
    vx = _value(x)
    # exp of a non-positive argument never overflows
    z = np.exp(-np.abs(vx))
    out = np.where(vx >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    if not isinstance(x, Var):
        return out
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def logit(p, eps=LOGIT_EPS):
    """log(p / (1 - p)) after clipping p into [eps, 1 - eps]."""
    vp = _value(p)
    clipped = np.clip(vp, eps, 1.0 - eps)
    out = np.log(clipped) - np.log1p(-clipped)
    if not isinstance(p, Var):
        return out
    inside = (vp >= eps) & (vp <= 1.0 - eps)
    return _node(out, (p,), lambda g: (g * inside / (clipped * (1.0 - clipped)),))


def log(x):
    vx = _value(x)
    out = np.log(vx)
    if not isinstance(x, Var):
        return out
    return _node(out, (x,), lambda g: (g / vx,))


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    vx = _value(x)
    out = np.maximum(vx, 0.0) + np.log1p(np.exp(-np.abs(vx)))
    if not isinstance(x, Var):
        return out
    return _node(out, (x,), lambda g: (g * sigmoid(vx),))


def clamp_min(x, floor):
    vx = _value(x)
    out = np.maximum(vx, floor)
    if not isinstance(x, Var):
        return out
    return _node(out, (x,), lambda g: (g * (vx >= floor),))


def sum_(x, axis=None):
    vx = _value(x)
    out = vx.sum(axis=axis)
    if not isinstance(x, Var):
        return out

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, vx.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), vx.shape).copy(),)

    return _node(out, (x,), back)


def mean(x, axis=None):
    vx = _value(x)
    count = vx.size if axis is None else vx.shape[axis]
    return mul(sum_(x, axis), 1.0 / count)


def reshape(x, shape):
    vx = _value(x)
    out = vx.reshape(shape)
    if not isinstance(x, Var):
        return out
    return _node(out, (x,), lambda g: (g.reshape(vx.shape),))


def getitem(x, index):
    vx = _value(x)
    out = vx[index]
    if not isinstance(x, Var):
        return out

    def back(g):
        full = np.zeros_like(vx)
        np.add.at(full, index, g)
        return (full,)

    return _node(np.array(out), (x,), back)


def take_rows(table, indices):
    """Gather rows of a 2-D table; gradient scatters back into those rows only."""
    vt = _value(table)
    idx = np.asarray(indices)
    out = vt[idx]
    if not isinstance(table, Var):
        return out

    def back(g):
        full = np.zeros_like(vt)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, vt.shape[1]))
        return (full,)

    return _node(out, (table,), back)


def _expand_ellipsis(subscripts, ndim_a, ndim_b):
    # spell '...' out with fresh letters so the backward contractions are explicit
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    used = set((sa + sb + out_sub).replace(".", ""))
    fresh = [c for c in "ABCDEFGHIJKLMNOPQRSTUVWXYZ" if c not in used]
    n_a = ndim_a - len(sa.replace("...", "")) if "..." in sa else 0
    n_b = ndim_b - len(sb.replace("...", "")) if "..." in sb else 0
    n = max(n_a, n_b)
    letters = "".join(fresh[:n])
    sa = sa.replace("...", letters[n - n_a:])
    sb = sb.replace("...", letters[n - n_b:])
    out_sub = out_sub.replace("...", letters)
    return sa, sb, out_sub


def einsum(subscripts, a, b):
    """Two-operand einsum.

    Every index of an operand must also appear in the other operand or in the
    output, which holds for all contractions used by the model.
    """
    va, vb = _value(a), _value(b)
    sa, sb, out_sub = _expand_ellipsis(subscripts, va.ndim, vb.ndim)
    out = np.einsum(f"{sa},{sb}->{out_sub}", va, vb)
    if not _is_var(a, b):
        return out
    for s, other in ((sa, sb), (sb, sa)):
        missing = set(s) - set(other) - set(out_sub)
        if missing:
            raise GradientContractError(f"einsum index {sorted(missing)} summed out of one operand only")

    def back(g):
        ga = np.einsum(f"{out_sub},{sb}->{sa}", g, vb) if isinstance(a, Var) else None
        gb = np.einsum(f"{out_sub},{sa}->{sb}", g, va) if isinstance(b, Var) else None
        return ga, gb

    return _node(out, (a, b), back)


def linear(x, W, b):
    """``W @ x + b`` with x of shape (..., n), W of shape (k, n), b of shape (k,)."""
    vx, vW, vb = _value(x), _value(W), _value(b)
    if vW.ndim != 2 or vx.shape[-1] != vW.shape[1] or vb.shape != (vW.shape[0],):
        raise DimensionError(f"linear: x {vx.shape}, W {vW.shape}, b {vb.shape} do not agree")
    return add(einsum("...n,kn->...k", x, W) if vx.ndim > 1 else einsum("n,kn->k", x, W), b)


def weighted_mean_aggregate(messages, weights, eps=1e-12):
    """Weighted mean of message rows.

    ``messages`` has shape (..., m, d); ``weights`` is either a vector (m,) or
    a matrix (r, m) giving one weighting per output row. The denominator is
    floored at ``eps`` so an all-zero weighting yields a zero vector.
    """
    vw = _value(weights)
    if np.any(vw < 0):
        raise ValueError("aggregation weights must be non-negative")
    if vw.ndim == 1:
        num = einsum("...jd,j->...d", messages, weights)
        return div(num, clamp_min(sum_(weights), eps))
    num = einsum("...jd,ij->...id", messages, weights)
    den = clamp_min(sum_(weights, axis=1), eps)
    return div(num, reshape(den, (vw.shape[0], 1)))


def binary_cross_entropy_with_logits(logits, labels):
    """Per-element y*log(1+e^-z) + (1-y)*log(1+e^z)."""
    y = np.asarray(labels, dtype=np.float64)
    return sub(softplus(logits), mul(logits, y))


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if isinstance(parent, Var) and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss, params=None):
    """Accumulate d(loss)/d(leaf) into every leaf's ``grad``.

    When ``params`` is given, gradients of leaves bound to parameter names are
    added into ``params.grads``; parameters the loss never touched keep
    whatever they had (zero after :meth:`ParamStore.zero_grad`).
    """
    if not isinstance(loss, Var):
        raise GradientContractError("loss is not part of a recorded computation")
    if loss.value.size != 1:
        raise GradientContractError(f"loss must be scalar, got shape {loss.value.shape}")
    order = _topological(loss)
    for node in order:
        node.grad = None
    loss.grad = -np.ones_like(loss.value) if _GRADIENT_SIGN_BUG else np.ones_like(loss.value)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.backward_fn(node.grad)):
            if not isinstance(parent, Var) or g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
    if params is not None:
        for node in order:
            if node.param_name is not None and node.grad is not None:
                params.grads[node.param_name] += node.grad
    return loss


@contextmanager
def injected_gradient_bug():
    """Temporarily flip the sign of every gradient produced by :func:`backward`."""
    global _GRADIENT_SIGN_BUG
    previous = _GRADIENT_SIGN_BUG
    _GRADIENT_SIGN_BUG = True
    try:
        yield
    finally:
        _GRADIENT_SIGN_BUG = previous


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


class ParamStore:
    """Named float64 parameters with matching gradient buffers."""

    def __init__(self, params=None):
        self.params: OrderedDict[str, np.ndarray] = OrderedDict()
        self.grads: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def names(self):
        return list(self.params)

    def var(self, name):
        """Leaf node reading parameter ``name``."""
        return Var(self.params[name], param_name=name)

    def zero_grad(self, names=None):
        for name in names or self.params:
            self.grads[name].fill(0.0)

    def copy(self):
        other = ParamStore()
        for name, value in self.params.items():
            other.add(name, value.copy())
        return other

    def snapshot(self, names=None):
        return {n: self.params[n].copy() for n in (names or self.params)}

    def to_dict(self):
        return {
            "format_version": CHECKPOINT_VERSION,
            "params": {
                name: {"shape": list(value.shape), "values": value.ravel().tolist()}
                for name, value in self.params.items()
            },
        }

    @classmethod
    def from_dict(cls, payload):
        version = payload.get("format_version")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint format_version {version!r}")
        store = cls()
        for name, entry in payload["params"].items():
            store.add(name, np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"]))
        return store

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


def _check_finite_grads(store, names):
    for name in names:
        if not np.all(np.isfinite(store.grads[name])):
            raise NumericError(f"non-finite gradient for parameter {name!r}")


class SGD:
    def __init__(self, names, lr, weight_decay=0.0):
        self.names = list(names)
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self, store):
        _check_finite_grads(store, self.names)
        for name in self.names:
            g = store.grads[name] + self.weight_decay * store.params[name]
            store.params[name] -= self.lr * g
        store.zero_grad(self.names)


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, names, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.names = list(names)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, store):
        _check_finite_grads(store, self.names)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name in self.names:
            p = store.params[name]
            g = store.grads[name] + self.weight_decay * p
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        store.zero_grad(self.names)


def make_optimizer(rule, names, lr, weight_decay=0.0):
    if rule == "adam":
        return Adam(names, lr, weight_decay)
    if rule == "sgd":
        return SGD(names, lr, weight_decay)
    raise ValueError(f"unknown optimizer rule {rule!r}")


def optimizer_step(params, rule, lr, weight_decay=0.0, names=None):
    """One stateless descent step (Adam state starts fresh, i.e. t = 1)."""
    make_optimizer(rule, names or params.names(), lr, weight_decay).step(params)
    return params


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    # name -> (worst relative error, flat index, autodiff grad, finite-difference grad)
    per_param: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "max_rel_error": self.max_rel_error,
            "n_checked": self.n_checked,
            "per_param": {
                name: {"worst_rel_error": e, "index": int(i), "autodiff": a, "finite_diff": f}
                for name, (e, i, a, f) in self.per_param.items()
            },
        }


def finite_diff_check(loss_fn, params, h=1e-5, max_coords=None, min_coords=200, seed=0, names=None):
    """Compare reverse-mode gradients with central differences.

    ``loss_fn(params)`` must return a scalar :class:`Var` built from
    ``params.var(...)`` leaves. If ``max_coords`` is given and the parameters
    have more coordinates than that, a random subsample is checked, spread
    over every parameter and never fewer than ``min_coords`` in total.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("finite-difference step must lie in [1e-7, 1e-3]")
    names = list(names or params.names())
    params.zero_grad()
    backward(loss_fn(params), params)
    analytic = {n: params.grads[n].copy() for n in names}
    params.zero_grad()

    rng = np.random.default_rng(seed)
    total = sum(params[n].size for n in names)
    budget = total if max_coords is None else max(min(total, max_coords), min(total, min_coords))
    report = GradCheckReport(max_rel_error=0.0, n_checked=0)
    for name in names:
        size = params[name].size
        if budget >= total:
            coords = np.arange(size)
        else:
            share = max(1, int(round(budget * size / total)))
            coords = np.sort(rng.choice(size, size=min(size, share), replace=False))
        flat = params[name].reshape(-1)
        worst = (0.0, 0, 0.0, 0.0)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = float(_value(loss_fn(params)))
            flat[c] = orig - h
            f_minus = float(_value(loss_fn(params)))
            flat[c] = orig
            g_fd = (f_plus - f_minus) / (2.0 * h)
            g_ad = float(analytic[name].reshape(-1)[c])
            err = abs(g_ad - g_fd) / max(abs(g_ad), abs(g_fd), 1e-8)
            if err >= worst[0]:
                worst = (err, int(c), g_ad, g_fd)
            report.n_checked += 1
        report.per_param[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst[0])
    return report
