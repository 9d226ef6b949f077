"""Regression datasets, unit-norm standardization and CSV input/output."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, InputError

FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class Dataset:
    """Covariates ``X`` (n x d) and responses ``Y`` (n,)."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        Y = np.array(self.Y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or Y.ndim != 1:
            raise InputError(f"expected X of shape (n, d) and Y of shape (n,), got {X.shape} and {Y.shape}")
        if X.shape[0] != Y.shape[0]:
            raise InputError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]} entries")
        if X.shape[0] < 2 or X.shape[1] < 1:
            raise InputError(f"need n >= 2 and d >= 1, got n={X.shape[0]}, d={X.shape[1]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise InputError("dataset contains non-finite entries")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.Y[idx])


@dataclass(frozen=True)
class StandardizationInfo:
    """Affine maps x' = (x - x_center) / x_scale and y' = (y - y_center) / y_scale."""

    x_center: np.ndarray
    x_scale: np.ndarray
    y_center: float
    y_scale: float

    def __post_init__(self):
        object.__setattr__(self, "x_center", np.asarray(self.x_center, dtype=float))
        object.__setattr__(self, "x_scale", np.asarray(self.x_scale, dtype=float))
        if np.any(self.x_scale <= 0) or not self.y_scale > 0:
            raise InputError("standardization scales must be strictly positive")

    def transform_x(self, X):
        return (np.asarray(X, dtype=float) - self.x_center) / self.x_scale

    def inverse_x(self, Xs):
        return np.asarray(Xs, dtype=float) * self.x_scale + self.x_center

    def transform_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_center) / self.y_scale

    def inverse_y(self, ys):
        return np.asarray(ys, dtype=float) * self.y_scale + self.y_center

    def to_dict(self) -> dict:
        return {
            "x_center": self.x_center.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_center": float(self.y_center),
            "y_scale": float(self.y_scale),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "StandardizationInfo":
        return cls(np.array(obj["x_center"], dtype=float), np.array(obj["x_scale"], dtype=float),
                   float(obj["y_center"]), float(obj["y_scale"]))


def standardize(data: Dataset) -> tuple[Dataset, StandardizationInfo]:
    """Center every column of X and Y and scale it to unit Euclidean norm."""
    xc = data.X.mean(axis=0)
    Xc = data.X - xc
    xs = np.linalg.norm(Xc, axis=0)
    yc = data.Y.mean()
    Yc = data.Y - yc
    ys = np.linalg.norm(Yc)
    for k, s in enumerate(xs):
        if not s > 0 or s <= 1e-14 * max(1.0, np.abs(data.X[:, k]).max()):
            raise DegenerateInputError(f"covariate column x{k + 1} is constant")
    if not ys > 0 or ys <= 1e-14 * max(1.0, np.abs(data.Y).max()):
        raise DegenerateInputError("response column y is constant")
    info = StandardizationInfo(xc, xs, float(yc), float(ys))
    return Dataset(Xc / xs, Yc / ys), info


def read_csv(path) -> Dataset:
    """Read a CSV with header ``x1,...,xd,y``; no missing values allowed."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_csv(text, source=str(path))


def parse_csv(text: str, source: str = "<string>") -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise InputError(f"{source}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[-1] != "y":
        raise InputError(f"{source}: header must be x1,...,xd,y")
    width = len(header)
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise InputError(f"{source}:{lineno}: expected {width} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise InputError(f"{source}:{lineno}: unparseable or missing value") from None
        values.append(vals)
    arr = np.array(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{source}: non-finite value")
    return Dataset(arr[:, :-1], arr[:, -1])


def read_matrix_csv(path) -> np.ndarray:
    """Read query points; a trailing ``y`` column, if present, is dropped."""
    rows = [r for r in csv.reader(io.StringIO(Path(path).read_text(encoding="utf-8"))) if r]
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    ncol = len(header) - (1 if header[-1] == "y" else 0)
    try:
        arr = np.array([[float(v) for v in r[:ncol]] for r in rows[1:]], dtype=float)
    except ValueError:
        raise InputError(f"{path}: unparseable or missing value") from None
    if arr.size and not np.all(np.isfinite(arr)):
        raise InputError(f"{path}: non-finite value")
    return arr.reshape(len(rows) - 1, ncol)


def format_csv(data: Dataset) -> str:
    buf = io.StringIO()
    buf.write(",".join([f"x{k + 1}" for k in range(data.d)] + ["y"]) + "\n")
    for x, y in zip(data.X, data.Y):
        buf.write(",".join(FLOAT_FMT % v for v in (*x, y)) + "\n")
    return buf.getvalue()


def write_csv(data: Dataset, path) -> None:
    Path(path).write_text(format_csv(data), encoding="utf-8")
