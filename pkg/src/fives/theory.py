"""Exact information quantities for three binary variables (X1, X2, Y).

Everything is in nats. Functions operate on a single (2, 2, 2) joint table
``p[x1, x2, y]`` or on a stack of them with shape (n, 2, 2, 2), so the bound
fuzzer runs vectorized over many tables at once.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

SUM_TOL = 1e-12


class DomainError(ValueError):
    pass


def _xlogx(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos])
    return out


def entropy(pmf, axis=-1):
    """Shannon entropy; 0 log 0 = 0."""
    p = np.asarray(pmf, dtype=np.float64)
    if np.any(p < 0):
        raise DomainError("negative probability")
    if not np.allclose(p.sum(axis=axis), 1.0, atol=1e-9, rtol=0):
        raise DomainError("probabilities do not sum to 1")
    return -_xlogx(p).sum(axis=axis)


def _h(p, axes):
    # entropy of an already-normalized table over the trailing ``axes``
    return -_xlogx(p).sum(axis=axes)


def mutual_information(joint):
    """I(X; Y) = H(X) + H(Y) - H(X, Y) for a 2-D joint table (or a stack of them)."""
    j = np.asarray(joint, dtype=np.float64)
    if np.any(j < 0):
        raise DomainError("negative probability")
    if not np.allclose(j.sum(axis=(-2, -1)), 1.0, atol=1e-9, rtol=0):
        raise DomainError("joint does not sum to 1")
    return _h(j.sum(axis=-1), -1) + _h(j.sum(axis=-2), -1) - _h(j, (-2, -1))


@dataclass
class JointPMF:
    """p[x1][x2][y] for binary X1, X2, Y."""

    p: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.p.shape != (2, 2, 2):
            raise DomainError(f"joint table must have shape (2, 2, 2), got {self.p.shape}")
        if np.any(self.p < 0) or abs(self.p.sum() - 1.0) > SUM_TOL:
            raise DomainError("joint table must be non-negative and sum to 1")

    @property
    def prior(self):
        return self.p.sum(axis=(0, 1))

    def conditional(self):
        """p_{x1, x2 | y} with shape (2, 2, 2); NaN where P(Y = y) = 0."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.p / self.prior[None, None, :]

    @classmethod
    def from_conditional(cls, cond, prior):
        cond = np.asarray(cond, dtype=np.float64)
        return cls(cond * np.asarray(prior, dtype=np.float64)[None, None, :])


def _stack(pmf):
    if isinstance(pmf, JointPMF):
        return pmf.p[None]
    p = np.asarray(pmf, dtype=np.float64)
    return p[None] if p.ndim == 3 else p


def conditional_correlation(pmf, y):
    """Pearson correlation of X1 and X2 given Y = y from the closed form.

    Returns NaN (the undefined marker) when either conditional marginal is
    degenerate or P(Y = y) = 0.
    """
    p = _stack(pmf)
    py = p[..., y].sum(axis=(-2, -1))
    with np.errstate(invalid="ignore", divide="ignore"):
        c = p[..., y] / py[:, None, None]
        p00, p01, p10, p11 = c[:, 0, 0], c[:, 0, 1], c[:, 1, 0], c[:, 1, 1]
        var = (p10 + p11) * (p00 + p01) * (p00 + p10) * (p01 + p11)
        rho = (p00 * p11 - p01 * p10) / np.sqrt(var)
    rho = np.where((py > 0) & (var > 0), rho, np.nan)
    return float(rho[0]) if isinstance(pmf, JointPMF) or np.ndim(pmf) == 3 else rho


def _pair_y_joint(p):
    # (n, 4, 2): the pair (X1, X2) flattened against Y
    return p.reshape(p.shape[0], 4, 2)


def product_variable_mi(pmf):
    """I(Z; Y) with Z = X1 * X2 (Z = 1 only when both are 1)."""
    p = _stack(pmf)
    z1 = p[:, 1, 1, :]
    z0 = p.sum(axis=(1, 2)) - z1
    out = mutual_information(np.stack([z0, z1], axis=1))
    return float(out[0]) if isinstance(pmf, JointPMF) or np.ndim(pmf) == 3 else out


@dataclass
class Prop1Report:
    mi_x1_y: float
    mi_x2_y: float
    C: float
    rho: float
    lhs: float
    rhs: float
    mi_pair_y: float
    incremental_entropy_inverse: float
    holds: bool

    def to_dict(self):
        return asdict(self)


def prop1_quantities(p, c_margin):
    """Vectorized proposition terms for a stack of joint tables (n, 2, 2, 2).

    Rows with an undefined conditional correlation carry NaN in ``rho``,
    ``rhs`` and ``holds`` is False there; callers should skip them.
    """
    p = _stack(p)
    j1 = p.sum(axis=2)  # (n, x1, y)
    j2 = p.sum(axis=1)  # (n, x2, y)
    mi1 = mutual_information(j1)
    mi2 = mutual_information(j2)
    pair = mutual_information(_pair_y_joint(p))
    prior = p.sum(axis=(1, 2))  # (n, y)
    # 1/d = H(X1|Y) + H(X2|Y) - H(X1,X2|Y), each H(.|Y) = H(., Y) - H(Y)
    h_y = _h(prior, -1)
    inv_d = (_h(j1, (-2, -1)) - h_y) + (_h(j2, (-2, -1)) - h_y) - (_h(p, (-3, -2, -1)) - h_y)
    rho = np.maximum(np.abs(conditional_correlation(p, 0)), np.abs(conditional_correlation(p, 1)))
    defined = np.isfinite(conditional_correlation(p, 0)) & np.isfinite(conditional_correlation(p, 1))
    C = np.maximum(mi1, mi2) + c_margin
    lhs = product_variable_mi(p)
    rhs = 2.0 * C + np.log(2.0 * rho**2 + 1.0)
    return {
        "mi_x1_y": mi1,
        "mi_x2_y": mi2,
        "C": C,
        "rho": np.where(defined, rho, np.nan),
        "lhs": lhs,
        "rhs": np.where(defined, rhs, np.nan),
        "mi_pair_y": pair,
        "incremental_entropy_inverse": inv_d,
        "mi_x1_x2": mutual_information(p.sum(axis=3)),
        "defined": defined,
        "holds": defined & (lhs < rhs),
    }


def prop1_check(pmf, c_margin=1e-9):
    if c_margin <= 0:
        raise ValueError("C margin must be positive")
    q = prop1_quantities(pmf.p if isinstance(pmf, JointPMF) else pmf, c_margin)
    if not q["defined"][0]:
        raise DomainError("conditional correlation undefined for this table")
    return Prop1Report(**{k: (bool(q[k][0]) if k == "holds" else float(q[k][0])) for k in Prop1Report.__dataclass_fields__})


def sample_random_pmfs(n, seed, mode):
    """Stack of n joint tables.

    ``dirichlet-general``: the 8 cells from a flat Dirichlet.
    ``conditional-product``: Y ~ Bernoulli(u) and, given y, X1 and X2
    independent Bernoullis, so the conditional correlation is zero.
    """
    rng = np.random.default_rng(seed)
    if mode == "dirichlet-general":
        return rng.dirichlet(np.ones(8), size=n).reshape(n, 2, 2, 2)
    if mode == "conditional-product":
        py1 = rng.random(n)
        a = rng.random((n, 2))  # P(X1 = 1 | y)
        b = rng.random((n, 2))  # P(X2 = 1 | y)
        prior = np.stack([1.0 - py1, py1], axis=1)
        x1 = np.stack([1.0 - a, a], axis=1)  # (n, x1, y)
        x2 = np.stack([1.0 - b, b], axis=1)  # (n, x2, y)
        return x1[:, :, None, :] * x2[:, None, :, :] * prior[:, None, None, :]
    raise ValueError(f"unknown sampling mode {mode!r}")


def sample_random_pmf(seed, mode):
    return JointPMF(sample_random_pmfs(1, seed, mode)[0])


MODES = ("dirichlet-general", "conditional-product")


def verify_bound(n_samples, seed=0, mode="dirichlet-general", c_margin=1e-9, tol=1e-10, chunk=50_000):
    """Fuzz the bound on ``n_samples`` random tables and summarize.

    ``mode="both"`` splits the draw evenly between the two samplers. Besides
    the bound itself the report counts failures of the two proof steps: the
    stated additivity I(X1;Y) + I(X2;Y) + 1/d = I(X1,X2;Y) and the
    incremental-entropy bound 1/d <= log(2 rho^2 + 1).
    """
    modes = MODES if mode == "both" else (mode,)
    report = {
        "n_samples": int(n_samples),
        "seed": seed,
        "mode": mode,
        "c_margin": c_margin,
        "n_skipped_degenerate": 0,
        "n_violations": 0,
        "max_ratio": None,
        "tightest_sample": None,
        "n_additivity_failures": 0,
        "max_additivity_error": 0.0,
        "n_incremental_bound_failures": 0,
        "max_incremental_excess": None,
        "max_corrected_additivity_error": 0.0,
    }
    if n_samples <= 0:
        return report
    best_ratio = -math.inf
    best_excess = -math.inf
    per_mode = [n_samples // len(modes) + (1 if i < n_samples % len(modes) else 0) for i in range(len(modes))]
    for mi, (m, count) in enumerate(zip(modes, per_mode)):
        done = 0
        while done < count:
            size = min(chunk, count - done)
            p = sample_random_pmfs(size, [seed, mi, done], m)
            q = prop1_quantities(p, c_margin)
            ok = q["defined"]
            report["n_skipped_degenerate"] += int((~ok).sum())
            report["n_violations"] += int((ok & ~(q["lhs"] < q["rhs"])).sum())
            ratio = np.where(ok, q["lhs"] / q["rhs"], -np.inf)
            k = int(np.argmax(ratio))
            if ratio[k] > best_ratio:
                best_ratio = float(ratio[k])
                report["tightest_sample"] = {"mode": m, "p": p[k].tolist(), "lhs": float(q["lhs"][k]), "rhs": float(q["rhs"][k])}
            add_err = np.abs(q["mi_x1_y"] + q["mi_x2_y"] + q["incremental_entropy_inverse"] - q["mi_pair_y"])[ok]
            corrected = np.abs(
                q["mi_x1_y"] + q["mi_x2_y"] + q["incremental_entropy_inverse"] - q["mi_x1_x2"] - q["mi_pair_y"]
            )[ok]
            report["n_additivity_failures"] += int((add_err > tol).sum())
            if add_err.size:
                report["max_additivity_error"] = max(report["max_additivity_error"], float(add_err.max()))
                report["max_corrected_additivity_error"] = max(
                    report["max_corrected_additivity_error"], float(corrected.max())
                )
            excess = (q["incremental_entropy_inverse"] - np.log(2.0 * q["rho"] ** 2 + 1.0))[ok]
            report["n_incremental_bound_failures"] += int((excess > tol).sum())
            if excess.size:
                best_excess = max(best_excess, float(excess.max()))
            done += size
    report["max_ratio"] = None if best_ratio == -math.inf else best_ratio
    report["max_incremental_excess"] = None if best_excess == -math.inf else best_excess
    return report
