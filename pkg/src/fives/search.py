"""Alternating search over model parameters and adjacency logits, plus the
fixed-architecture evaluation modes (learn-from-scratch, fine-tune, random)."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .data import iter_batches
from .downstream import MetricError, auc
from .graph import (
    AdjTensor,
    TemperatureSchedule,
    adjacency_slices,
    binarize,
    init_logits,
    layer_thresholds,
    rescale,
    save_adjacency,
)
from .model import THETA_NAMES, ModelShape, forward_full, init_params, predict_proba_heads


class ConfigError(ValueError):
    pass


class SearchAbort(dc.NumericError):
    def __init__(self, epoch, step, tau, detail):
        self.epoch, self.step, self.tau = epoch, step, tau
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}, tau {tau:.4g}: {detail}")


@dataclass
class SearchConfig:
    K: int = 2
    d: int = 8
    lr_theta: float = 5e-3
    lr_arch: float = 5e-3
    epochs: int = 10
    batch_size: int = 128
    weight_decay: float = 1e-4
    dropout: float = 0.3
    tau_start: float = 1.0
    tau_end: float = 0.02
    tau_schedule: str = "linear"
    anneal: bool = True
    thresholds: float | list = 0.5
    adjacency_mode: str = "recursive"
    optimizer: str = "adam"
    strict_alternation: bool = False
    straight_through: bool = False
    arch_dropout: bool = False
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not isinstance(self.K, int) or self.K < 1:
            raise ConfigError(f"K must be a positive integer, got {self.K!r}")
        if self.d < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("d and batch_size must be positive, epochs non-negative")
        if self.lr_theta <= 0 or self.lr_arch < 0 or self.weight_decay < 0:
            raise ConfigError("learning rates must be positive (lr_arch may be 0), weight_decay >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not self.tau_start >= self.tau_end > 0:
            raise ConfigError("need tau_start >= tau_end > 0")
        if self.tau_schedule not in ("linear", "exponential"):
            raise ConfigError(f"unknown tau_schedule {self.tau_schedule!r}")
        if self.adjacency_mode not in ("recursive", "independent"):
            raise ConfigError(f"unknown adjacency_mode {self.adjacency_mode!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        try:
            layer_thresholds(self.thresholds, self.K)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def replace(self, **changes):
        return SearchConfig(**{**asdict(self), **changes})

    def schedule(self, total_steps):
        if not self.anneal:
            return TemperatureSchedule(1.0, 1.0, total_steps, self.tau_schedule)
        return TemperatureSchedule(self.tau_start, self.tau_end, total_steps, self.tau_schedule)

    @classmethod
    def from_dict(cls, payload):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path):
        try:
            payload = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(payload)

    def save(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=1))


@dataclass
class SearchResult:
    soft_A: AdjTensor
    binarized_A: AdjTensor
    params: dc.ParamStore
    shape: ModelShape
    config: SearchConfig
    metrics: list = field(default_factory=list)
    tau_trace: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)

    @property
    def final_tau(self):
        return self.tau_trace[-1] if self.tau_trace else self.config.schedule(0)(0)

    def propagation_slices(self, tau=None):
        return rescale(self.soft_A, self.final_tau if tau is None else tau).values

    def predict_proba(self, codes):
        """Mean of the per-layer head probabilities."""
        return predict_proba_heads(codes, self.params, self.shape, self.propagation_slices()).mean(axis=1)

    def save(self, out_dir, names=None):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_adjacency(
            out / "adjacency.json",
            self.soft_A,
            self.binarized_A,
            self.config.thresholds,
            names,
            {"tau_final": self.final_tau, "adjacency_mode": self.config.adjacency_mode},
        )
        self.params.save(out / "params.json")
        self.shape.save(out / "model.json")
        self.config.save(out / "config.json")
        (out / "metrics.ndjson").write_text("".join(json.dumps(m) + "\n" for m in self.metrics))
        (out / "tau_trace.json").write_text(json.dumps(self.tau_trace))

    @classmethod
    def load(cls, out_dir):
        out = Path(out_dir)
        params = dc.ParamStore.load(out / "params.json")
        shape = ModelShape.load(out / "model.json")
        config = SearchConfig.load(out / "config.json")
        metrics = [json.loads(line) for line in (out / "metrics.ndjson").read_text().splitlines() if line]
        tau_trace = json.loads((out / "tau_trace.json").read_text())
        soft, binary = architecture_from_logits(params["H"], config)
        return cls(soft, binary, params, shape, config, metrics, tau_trace)


def architecture_from_logits(H, config, thresholds=None):
    ths = config.thresholds if thresholds is None else thresholds
    soft = AdjTensor(np.stack(adjacency_slices(H, ths, config.adjacency_mode)))
    return soft, binarize(soft, ths)


def _theta(store):
    return {n: store.params[n] for n in THETA_NAMES}


def _check_tables(train, val, m_min=1):
    if train.n_rows == 0 or val.n_rows == 0:
        raise ConfigError("train and validation splits must be non-empty")
    if train.cardinalities != val.cardinalities:
        raise ConfigError("train and validation tables do not share vocabularies")
    if train.n_features < m_min:
        raise ConfigError(f"need at least {m_min} features, got {train.n_features}")


def evaluate(params, shape, slices, table):
    """(loss, auc) of the mean-of-heads predictor with fixed propagation slices."""
    heads = predict_proba_heads(table.codes, params, shape, slices)
    p = np.clip(heads, 1e-12, 1 - 1e-12)
    y = table.labels[:, None]
    loss = float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))
    try:
        score = auc(heads.mean(axis=1), table.labels)
    except MetricError:
        score = float("nan")
    return loss, score


def _seed_stream(rng):
    return int(rng.integers(0, 2**31 - 1))


def fit(train, val, config, log=None):
    """Alternate parameter steps on train batches with adjacency steps on val batches.

    ``log`` (optional callable) receives each epoch's metric dict as it is produced.
    """
    config.validate()
    _check_tables(train, val, m_min=2)
    rng = np.random.default_rng(config.seed)
    shape = ModelShape(train.cardinalities, config.d, config.K)
    store = init_params(shape, rng)
    store.add("H", init_logits(config.K, shape.m))
    theta_opt = dc.make_optimizer(config.optimizer, THETA_NAMES, config.lr_theta, config.weight_decay)
    arch_opt = dc.make_optimizer(config.optimizer, ["H"], config.lr_arch, 0.0)

    n_batches = math.ceil(train.n_rows / config.batch_size)
    schedule = config.schedule(config.epochs * n_batches)
    common = dict(thresholds=config.thresholds, mode=config.adjacency_mode, straight_through=config.straight_through)

    metrics, tau_trace, seconds = [], [], []
    step = 0
    for epoch in range(config.epochs):
        started = time.perf_counter()
        train_batches = iter_batches(train, config.batch_size, shuffle=True, seed=_seed_stream(rng))
        val_batches = list(iter_batches(val, config.batch_size, shuffle=True, seed=_seed_stream(rng)))
        losses = []
        for i, batch in enumerate(train_batches):
            tau = schedule(step)
            tau_trace.append(tau)
            theta_before = {n: v.copy() for n, v in _theta(store).items()} if config.strict_alternation else None

            out = forward_full(
                batch.codes, batch.labels, store, shape, H=store.params["H"], tau=tau,
                dropout=config.dropout, rng=rng, **common,
            )
            loss = float(out.loss.value)
            if not math.isfinite(loss):
                raise SearchAbort(epoch, step, tau, "parameter step")
            dc.backward(out.loss, store)
            store.grads["H"].fill(0.0)
            theta_opt.step(store)
            losses.append(loss)

            if config.lr_arch > 0:
                vb = val_batches[i % len(val_batches)]
                out = forward_full(
                    vb.codes, vb.labels, theta_before or _theta(store), shape, H=store.var("H"), tau=tau,
                    dropout=config.dropout if config.arch_dropout else 0.0, rng=rng, **common,
                )
                if not math.isfinite(float(out.loss.value)):
                    raise SearchAbort(epoch, step, tau, "adjacency step")
                dc.backward(out.loss, store)
                arch_opt.step(store)
            step += 1

        tau_now = schedule(step)
        soft, _ = architecture_from_logits(store.params["H"], config)
        val_loss, val_auc = evaluate(store, shape, rescale(soft, tau_now).values, val)
        record = {
            "epoch": epoch + 1,
            "train_loss": float(np.mean(losses)),
            "val_loss": val_loss,
            "val_auc": val_auc,
            "tau": tau_now,
        }
        metrics.append(record)
        seconds.append(time.perf_counter() - started)
        if log is not None:
            log(record)
    tau_trace.append(schedule(step))

    soft, binary = architecture_from_logits(store.params["H"], config)
    return SearchResult(soft, binary, store, shape, config, metrics, tau_trace, seconds)


@dataclass
class ThetaFit:
    params: dc.ParamStore
    shape: ModelShape
    slices: np.ndarray
    val_auc: float
    history: list = field(default_factory=list)

    def predict_proba(self, codes):
        return predict_proba_heads(codes, self.params, self.shape, self.slices).mean(axis=1)


def train_theta(store, shape, slices, train, val, config, epochs=None, rng=None):
    """Parameter-only training under a frozen adjacency (slices used as given)."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    opt = dc.make_optimizer(config.optimizer, THETA_NAMES, config.lr_theta, config.weight_decay)
    epochs = config.epochs if epochs is None else epochs
    history = []
    for _ in range(epochs):
        losses = []
        for batch in iter_batches(train, config.batch_size, shuffle=True, seed=_seed_stream(rng)):
            out = forward_full(batch.codes, batch.labels, store, shape, A=slices, tau=1.0, dropout=config.dropout, rng=rng)
            loss = float(out.loss.value)
            if not math.isfinite(loss):
                raise SearchAbort(len(history), len(losses), 1.0, "fixed-architecture step")
            dc.backward(out.loss, store)
            opt.step(store)
            losses.append(loss)
        val_loss, val_auc = evaluate(store, shape, slices, val)
        history.append({"epoch": len(history) + 1, "train_loss": float(np.mean(losses)), "val_loss": val_loss, "val_auc": val_auc})
    _, val_auc = evaluate(store, shape, slices, val)
    return ThetaFit(store, shape, np.asarray(slices), val_auc, history)


def learn_from_scratch(A_fixed, train, val, config, epochs=None):
    """Fresh parameters trained against a frozen adjacency."""
    config.validate()
    _check_tables(train, val)
    values = A_fixed.values if isinstance(A_fixed, AdjTensor) else np.asarray(A_fixed)
    if values.shape[0] != config.K:
        raise ConfigError(f"adjacency has {values.shape[0]} slices but K={config.K}")
    rng = np.random.default_rng(config.seed)
    shape = ModelShape(train.cardinalities, config.d, config.K)
    store = init_params(shape, rng)
    return train_theta(store, shape, values, train, val, config, epochs, rng)


def fine_tune(result, train, val, config=None, epochs=None):
    """Continue parameter training from a search result with its final adjacency frozen."""
    config = result.config if config is None else config
    _check_tables(train, val)
    store = dc.ParamStore({n: result.params[n].copy() for n in THETA_NAMES})
    rng = np.random.default_rng(config.seed + 1)
    return train_theta(store, result.shape, result.propagation_slices(), train, val, config, epochs, rng)


def random_adjacency(m, K, density, seed):
    """Binarized tensor with independent Bernoulli(density) entries in slices k >= 1."""
    if not 0.0 < density <= 1.0:
        raise ValueError("density must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    values = np.empty((K, m, m))
    values[0] = np.eye(m)
    if K > 1:
        values[1:] = (rng.random((K - 1, m, m)) < density).astype(np.float64)
    return AdjTensor(values, binarized=True)
