"""Fitted piecewise-affine convex models, their extensions and optimality diagnostics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path

import numpy as np

from .data import Dataset, StandardizationInfo
from .errors import InputError
from .lp import simplex_standard_form

SCHEMA = "cvxreg-model-v1"
TIE_RTOL = 1e-12


class _OutsideHull:
    """Value of the canonical interpolant outside the convex hull of the anchors (+inf)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "OUTSIDE_HULL"

    def __float__(self):
        return math.inf


OUTSIDE_HULL = _OutsideHull()


@dataclass(frozen=True)
class Variant:
    """Shape restrictions of a fit.

    ``lipschitz`` bounds every subgradient norm (None means unbounded);
    ``signs`` holds one of +1 (nondecreasing), -1 (nonincreasing) or 0 (free)
    per coordinate; ``concave`` marks a fit of -Y that was negated back.
    """

    lipschitz: float | None = None
    signs: tuple[int, ...] | None = None
    concave: bool = False

    def __post_init__(self):
        if self.lipschitz is not None:
            L = float(self.lipschitz)
            if math.isinf(L) and L > 0:
                object.__setattr__(self, "lipschitz", None)
            elif not L > 0:
                raise InputError(f"Lipschitz bound must be positive, got {L}")
            else:
                object.__setattr__(self, "lipschitz", L)
        if self.signs is not None:
            signs = tuple(int(s) for s in self.signs)
            if any(s not in (-1, 0, 1) for s in signs):
                raise InputError(f"sign pattern entries must be -1, 0 or +1, got {signs}")
            object.__setattr__(self, "signs", signs)

    @property
    def name(self) -> str:
        parts = ["concave" if self.concave else "convex"]
        if self.lipschitz is not None:
            parts.append(f"lipschitz({self.lipschitz:g})")
        if self.signs is not None and any(self.signs):
            parts.append("monotone(" + ",".join({1: "+", -1: "-", 0: "0"}[s] for s in self.signs) + ")")
        return "+".join(parts)

    def to_dict(self) -> dict:
        return {"name": self.name, "lipschitz": self.lipschitz,
                "signs": list(self.signs) if self.signs is not None else None,
                "concave": self.concave}

    @classmethod
    def from_dict(cls, obj: dict) -> "Variant":
        signs = obj.get("signs")
        return cls(obj.get("lipschitz"), tuple(signs) if signs is not None else None,
                   bool(obj.get("concave", False)))


@dataclass(frozen=True)
class KktReport:
    primal_feasibility: float
    subgrad_stationarity: float
    theta_gradient: float
    complementarity: float

    def to_dict(self) -> dict:
        return {"primal_feasibility": self.primal_feasibility,
                "subgrad_stationarity": self.subgrad_stationarity,
                "theta_gradient": self.theta_gradient,
                "complementarity": self.complementarity}

    @classmethod
    def from_dict(cls, obj: dict) -> "KktReport":
        return cls(*(float(obj[k]) for k in
                     ("primal_feasibility", "subgrad_stationarity", "theta_gradient", "complementarity")))


@dataclass(frozen=True)
class PwaModel:
    """Fitted values ``theta``, subgradients ``xi`` and anchors of the max-affine fit.

    All arrays live on the scale the model was fitted on; ``standardization``
    (if set) maps raw inputs to that scale.
    """

    theta: np.ndarray
    xi: np.ndarray
    anchors: np.ndarray
    variant: Variant = field(default_factory=Variant)
    standardization: StandardizationInfo | None = None
    fit_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        xi = np.array(self.xi, dtype=float)
        anchors = np.array(self.anchors, dtype=float)
        if xi.ndim == 1:
            xi = xi[:, None]
        if anchors.ndim == 1:
            anchors = anchors[:, None]
        if xi.shape != anchors.shape or xi.shape[0] != theta.shape[0]:
            raise InputError(f"inconsistent model shapes: theta {theta.shape}, xi {xi.shape}, anchors {anchors.shape}")
        for a in (theta, xi, anchors):
            if not np.all(np.isfinite(a)):
                raise InputError("model contains non-finite entries")
            a.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "anchors", anchors)

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    @property
    def d(self) -> int:
        return self.xi.shape[1]

    @property
    def intercepts(self) -> np.ndarray:
        """b_j = theta_j - <xi_j, X_j>, so piece j is x -> <xi_j, x> + b_j."""
        return self.theta - np.einsum("ij,ij->i", self.xi, self.anchors)

    @property
    def kkt(self) -> KktReport | None:
        return self.fit_meta.get("kkt")

    @property
    def converged(self) -> bool:
        return bool(self.fit_meta.get("converged", False))

    @property
    def sign(self) -> float:
        """-1 for concave models (stored negated back from a convex fit of -Y), else +1."""
        return -1.0 if self.variant.concave else 1.0

    def max_violation(self) -> float:
        """Largest violation of the convexity (or concavity) constraints at the anchors."""
        s = self.sign
        return float(max(constraint_values(s * self.theta, s * self.xi, self.anchors).max(), 0.0))


def _check_point(model: PwaModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != model.d:
        raise InputError(f"query point has dimension {x.shape[0]}, model expects {model.d}")
    if not np.all(np.isfinite(x)):
        raise InputError("query point has non-finite entries")
    return x


def max_rule_pieces(model: PwaModel, x) -> tuple[float, np.ndarray]:
    """Max-rule value at ``x`` and the indices of all pieces attaining it."""
    x = _check_point(model, x)
    s = model.sign
    vals = s * (model.theta + np.einsum("jk,jk->j", x[None, :] - model.anchors, model.xi))
    top = vals.max()
    active = np.flatnonzero(vals >= top - TIE_RTOL * max(1.0, abs(top)))
    return s * float(top), active


def eval_max_rule(model: PwaModel, x) -> float:
    """max_j theta_j + <x - X_j, xi_j> (a min for concave models)."""
    return max_rule_pieces(model, x)[0]


def predict_max_rule(model: PwaModel, Xq, chunk: int = 2048) -> np.ndarray:
    """Vectorised max-rule evaluation at the rows of ``Xq`` (fit scale)."""
    Xq = np.asarray(Xq, dtype=float)
    if Xq.ndim == 1:
        Xq = Xq[:, None] if model.d == 1 else Xq[None, :]
    if Xq.shape[1] != model.d:
        raise InputError(f"query points have dimension {Xq.shape[1]}, model expects {model.d}")
    if not np.all(np.isfinite(Xq)):
        raise InputError("query points have non-finite entries")
    sg = model.sign
    b = sg * model.intercepts
    xi_t = sg * model.xi.T
    out = np.empty(Xq.shape[0])
    for s in range(0, Xq.shape[0], chunk):
        out[s:s + chunk] = (Xq[s:s + chunk] @ xi_t + b).max(axis=1)
    return sg * out


def eval_canonical(model: PwaModel, x):
    """Largest convex function through (X_k, theta_k), evaluated at ``x``.

    Solves min sum_k a_k theta_k over convex weights reproducing ``x``;
    returns ``OUTSIDE_HULL`` when ``x`` is not in the hull of the anchors.
    """
    x = _check_point(model, x)
    A = np.vstack([np.ones(model.n), model.anchors.T])
    b = np.concatenate([[1.0], x])
    res = simplex_standard_form(model.sign * model.theta, A, b)
    if res.status == "infeasible":
        return OUTSIDE_HULL
    return model.sign * res.value


def canonical_by_enumeration(anchors, theta, x, tol=1e-10):
    """Brute-force canonical value: minimum over all simplices of at most d+1 anchors containing x."""
    anchors = np.asarray(anchors, dtype=float)
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    n, d = anchors.shape
    best = math.inf
    for size in range(1, d + 2):
        for S in combinations(range(n), size):
            M = np.vstack([np.ones(size), anchors[list(S)].T])
            rhs = np.concatenate([[1.0], x])
            w, *_ = np.linalg.lstsq(M, rhs, rcond=None)
            if np.linalg.norm(M @ w - rhs) > tol * (1 + np.abs(rhs).max()) or w.min() < -tol:
                continue
            best = min(best, float(w @ theta[list(S)]))
    return OUTSIDE_HULL if math.isinf(best) else best


def constraint_values(theta, xi, X) -> np.ndarray:
    """g_ij = theta_j + <X_i - X_j, xi_j> - theta_i; feasible iff all g_ij <= 0."""
    P = X @ xi.T - np.einsum("jk,jk->j", X, xi)[None, :]
    return P + theta[None, :] - theta[:, None]


def d_adjoint(W: np.ndarray) -> np.ndarray:
    """D^T vec(W) with (D theta)_(i,j) = theta_j - theta_i: column sums minus row sums."""
    return W.sum(axis=0) - W.sum(axis=1)


def compute_kkt_report(state, data: Dataset, rho: float) -> KktReport:
    """The four optimality residuals of the convex regression QP at ``state``.

    ``state`` needs ``theta``, ``xi``, ``eta`` and ``nu`` attributes.
    """
    n = data.n
    theta, xi, eta, nu = state.theta, state.xi, state.eta, state.nu
    if theta.shape != (n,) or xi.shape != (n, data.d) or eta.shape != (n, n) or nu.shape != (n, n):
        raise InputError("solver state dimensions do not match the dataset")
    G = constraint_values(theta, xi, data.X)
    primal = np.linalg.norm(eta - G) / n
    S = nu.T @ data.X - nu.sum(axis=0)[:, None] * data.X
    stationarity = np.linalg.norm(S, axis=1).max()
    tgrad = np.linalg.norm(theta - data.Y - d_adjoint(nu))
    compl = np.abs(eta - np.minimum(eta - nu / rho, 0.0)).max()
    return KktReport(float(primal), float(stationarity), float(tgrad), float(compl))


def destandardize_model(model: PwaModel, info: StandardizationInfo | None = None) -> PwaModel:
    """Express a model fitted on standardized data in raw units."""
    info = info or model.standardization
    if info is None:
        return model
    theta = info.inverse_y(model.theta)
    xi = model.xi * info.y_scale / info.x_scale[None, :]
    anchors = info.inverse_x(model.anchors)
    return replace(model, theta=theta, xi=xi, anchors=anchors, standardization=None)


def predict(model: PwaModel, Xraw, method: str = "max") -> np.ndarray | list:
    """Predict at raw-unit query rows, applying the model's standardization if any.

    ``method="canonical"`` returns a list with ``OUTSIDE_HULL`` entries where needed.
    """
    Xraw = np.atleast_2d(np.asarray(Xraw, dtype=float))
    info = model.standardization
    Xs = info.transform_x(Xraw) if info is not None else Xraw
    if method == "max":
        vals = predict_max_rule(model, Xs)
        return info.inverse_y(vals) if info is not None else vals
    if method == "canonical":
        out = []
        for x in Xs:
            v = eval_canonical(model, x)
            if v is OUTSIDE_HULL:
                out.append(OUTSIDE_HULL)
            else:
                out.append(float(info.inverse_y(v)) if info is not None else v)
        return out
    raise InputError(f"unknown prediction method {method!r}")


# ---------------------------------------------------------------- JSON format

def _fmt(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            raise InputError("cannot serialize non-finite float")
        return "%.17g" % v
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, np.ndarray):
        return _fmt(v.tolist())
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(_fmt(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{_fmt(x)}" for k, x in v.items()) + "}"
    if hasattr(v, "to_dict"):
        return _fmt(v.to_dict())
    raise TypeError(f"cannot serialize {type(v).__name__}")


def dumps_json(obj) -> str:
    """JSON text with every float written as a 17-significant-digit decimal."""
    return _fmt(obj)


def model_to_dict(model: PwaModel, smooth: dict | None = None) -> dict:
    meta = dict(model.fit_meta)
    if isinstance(meta.get("kkt"), KktReport):
        meta["kkt"] = meta["kkt"].to_dict()
    out = {
        "schema": SCHEMA,
        "n": model.n,
        "d": model.d,
        "theta": model.theta,
        "xi": model.xi,
        "anchors": model.anchors,
        "variant": model.variant.to_dict(),
        "standardization": model.standardization.to_dict() if model.standardization else None,
        "fit_meta": meta,
    }
    if smooth is not None:
        out["smooth"] = smooth
    return out


def model_from_dict(obj: dict) -> PwaModel:
    if obj.get("schema") != SCHEMA:
        raise InputError(f"unsupported model schema {obj.get('schema')!r}")
    n, d = int(obj["n"]), int(obj["d"])
    meta = dict(obj.get("fit_meta") or {})
    if isinstance(meta.get("kkt"), dict):
        meta["kkt"] = KktReport.from_dict(meta["kkt"])
    std = obj.get("standardization")
    return PwaModel(
        theta=np.array(obj["theta"], dtype=float).reshape(n),
        xi=np.array(obj["xi"], dtype=float).reshape(n, d),
        anchors=np.array(obj["anchors"], dtype=float).reshape(n, d),
        variant=Variant.from_dict(obj.get("variant") or {}),
        standardization=StandardizationInfo.from_dict(std) if std else None,
        fit_meta=meta,
    )


def save_model(model: PwaModel, path, smooth: dict | None = None) -> None:
    Path(path).write_text(dumps_json(model_to_dict(model, smooth)) + "\n", encoding="utf-8")


def load_model_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def load_model(path) -> PwaModel:
    return model_from_dict(load_model_json(path))
