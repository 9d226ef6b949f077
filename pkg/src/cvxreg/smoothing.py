"""Smooth convex surrogates of a max-affine fit with certified uniform error.

A fitted model max_i {a_i^T x + b_i} is replaced by

    max_{w in simplex} sum_i w_i (a_i^T x + b_i) - tau * prox(w)

with either the squared prox 1/2 ||w - 1/m||^2 (evaluated by a Euclidean
projection onto the simplex) or the entropy prox sum w log w + log m
(a closed-form log-sum-exp).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateInputError, InputError
from .model import PwaModel

PROXES = ("squared", "entropy")
_ALIASES = {"sq": "squared", "squared": "squared", "entropy": "entropy", "ent": "entropy"}


def canonical_prox(prox: str) -> str:
    try:
        return _ALIASES[prox]
    except KeyError:
        raise InputError(f"unknown prox {prox!r}; expected one of {sorted(_ALIASES)}") from None


def project_simplex(c, stats: dict | None = None) -> np.ndarray:
    """Euclidean projection of ``c`` onto the unit simplex (one sort plus a linear scan).

    ``stats``, when given, receives the number of sorts and scanned entries.
    """
    c = np.asarray(c, dtype=float)
    m = c.shape[-1]
    u = -np.sort(-c, kind="stable")
    css = np.cumsum(u)
    k = np.arange(1, m + 1)
    cond = u - (css - 1.0) / k >= 0
    K = int(np.flatnonzero(cond)[-1]) + 1
    t = (css[K - 1] - 1.0) / K
    if stats is not None:
        stats["sorts"] = stats.get("sorts", 0) + 1
        stats["scanned"] = stats.get("scanned", 0) + m
    return np.maximum(c - t, 0.0)


def project_simplex_rows(C: np.ndarray) -> np.ndarray:
    """Row-wise simplex projection of a (q, m) array."""
    C = np.asarray(C, dtype=float)
    q, m = C.shape
    U = -np.sort(-C, axis=1)
    css = np.cumsum(U, axis=1)
    k = np.arange(1, m + 1)
    cond = U - (css - 1.0) / k >= 0
    K = m - np.argmax(cond[:, ::-1], axis=1)
    t = (css[np.arange(q), K - 1] - 1.0) / K
    return np.maximum(C - t[:, None], 0.0)


@dataclass(frozen=True)
class SmoothingCertificate:
    epsilon: float
    lipschitz_grad_constant: float
    prox: str
    tau: float
    m: int

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "lipschitz_grad_constant": self.lipschitz_grad_constant,
                "prox": self.prox, "tau": self.tau, "m": self.m}


@dataclass(frozen=True)
class SmoothModel:
    """Affine pieces x -> a_i^T x + b_i smoothed with ``prox`` at temperature ``tau``.

    Pieces are stored in convex orientation; ``sign = -1`` marks a concave
    source, whose surrogate is the negated smoothing of the negated pieces.
    """

    a: np.ndarray
    b: np.ndarray
    prox: str
    tau: float
    bias_offset: float = 0.0
    sign: float = 1.0
    source: PwaModel | None = None

    def __post_init__(self):
        object.__setattr__(self, "prox", canonical_prox(self.prox))
        if not self.tau > 0:
            raise InputError(f"tau must be positive, got {self.tau}")
        if self.a.shape[0] < 1 or not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise InputError("smooth model needs at least one finite piece")

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def sup_prox(self) -> float:
        return sup_prox(self.prox, self.m)

    def to_dict(self, certificate: SmoothingCertificate | None = None) -> dict:
        out = {"prox": self.prox, "tau": self.tau, "bias_offset": self.bias_offset}
        if certificate is not None:
            out["certificate"] = certificate.to_dict()
        return out

    @classmethod
    def from_model(cls, model: PwaModel, prox: str, tau: float, bias_offset: float = 0.0) -> "SmoothModel":
        s = model.sign
        return cls(s * model.xi.copy(), s * model.intercepts, prox, float(tau), float(bias_offset), s, model)


def sup_prox(prox: str, m: int) -> float:
    """Bound on the prox over the simplex used by the certificate: 1 - 1/m or log m."""
    prox = canonical_prox(prox)
    return (1.0 - 1.0 / m) if prox == "squared" else math.log(m)


def _piece_values(sm: SmoothModel, X):
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    if X2.shape[1] != sm.a.shape[1]:
        raise InputError(f"query points have dimension {X2.shape[1]}, model expects {sm.a.shape[1]}")
    if not np.all(np.isfinite(X2)):
        raise InputError("query points have non-finite entries")
    return X2 @ sm.a.T + sm.b, single


def _finish(sm, val, W, single):
    grad = W @ sm.a
    val = sm.sign * val + sm.bias_offset
    grad = sm.sign * grad
    if single:
        return float(val[0]), grad[0], W[0]
    return val, grad, W


def eval_smooth_sq(sm: SmoothModel, x):
    """Value, gradient and simplex weights of the squared-prox surrogate at ``x`` (or rows of ``x``)."""
    V, single = _piece_values(sm, x)
    m = sm.m
    W = project_simplex_rows(V / sm.tau - 1.0 / m)
    val = np.einsum("qi,qi->q", W, V) - 0.5 * sm.tau * ((W - 1.0 / m) ** 2).sum(axis=1)
    return _finish(sm, val, W, single)


def eval_smooth_entropy(sm: SmoothModel, x):
    """Value, gradient and softmax weights of the entropy-prox surrogate."""
    V, single = _piece_values(sm, x)
    Z = V / sm.tau
    top = Z.max(axis=1, keepdims=True)
    E = np.exp(Z - top)
    S = E.sum(axis=1, keepdims=True)
    W = E / S
    val = sm.tau * (np.log(S[:, 0]) + top[:, 0]) - sm.tau * math.log(sm.m)
    return _finish(sm, val, W, single)


def eval_smooth(sm: SmoothModel, x):
    return (eval_smooth_sq if sm.prox == "squared" else eval_smooth_entropy)(sm, x)


def smooth_values(sm: SmoothModel, X) -> np.ndarray:
    return np.atleast_1d(eval_smooth(sm, np.atleast_2d(X))[0])


def _certificate(sm: SmoothModel) -> SmoothingCertificate:
    A = np.column_stack([sm.b, sm.a])
    if sm.prox == "squared":
        lip = float(np.linalg.eigvalsh(A.T @ A)[-1]) / sm.tau
    else:
        lip = float(np.abs(A).max()) ** 2 / sm.tau
    return SmoothingCertificate(sm.tau * sm.sup_prox, lip, sm.prox, sm.tau, sm.m)


def make_smooth(model: PwaModel, prox: str, epsilon: float | None = None,
                tau: float | None = None) -> tuple[SmoothModel, SmoothingCertificate]:
    """Build the surrogate from an error budget ``epsilon`` or a temperature ``tau`` (exactly one)."""
    prox = canonical_prox(prox)
    if (epsilon is None) == (tau is None):
        raise InputError("give exactly one of epsilon or tau")
    m = model.n
    if epsilon is not None:
        if not epsilon > 0:
            raise InputError(f"epsilon must be positive, got {epsilon}")
        sp = sup_prox(prox, m)
        if sp <= 0:
            raise DegenerateInputError(f"a single piece has no {prox} smoothing budget (tau undefined for m=1)")
        tau = epsilon / sp
    elif not tau > 0:
        raise InputError(f"tau must be positive, got {tau}")
    sm = SmoothModel.from_model(model, prox, tau)
    return sm, _certificate(sm)


def certificate(sm: SmoothModel) -> SmoothingCertificate:
    return _certificate(sm)


def bias_correct(sm: SmoothModel, model: PwaModel | None = None) -> SmoothModel:
    """Shift the surrogate so its mean over the anchors equals the mean fitted value."""
    model = model if model is not None else sm.source
    if model is None:
        raise InputError("bias correction needs the source model")
    raw = replace(sm, bias_offset=0.0)
    vals = smooth_values(raw, model.anchors)
    return replace(sm, bias_offset=float(np.mean(model.theta - vals)))
