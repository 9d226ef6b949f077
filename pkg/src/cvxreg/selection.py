"""Choosing the Lipschitz bound by k-fold cross-validation, and risk-versus-L profiles."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .admm import SolverConfig, fit_admm, fit_alm
from .data import Dataset
from .errors import ConfigurationError
from .model import PwaModel, Variant, predict_max_rule


@dataclass
class CvResult:
    grid: np.ndarray
    mean_err: np.ndarray
    se: np.ndarray
    chosen: float
    folds: np.ndarray  # fold index of every observation
    fold_err: np.ndarray  # (len(grid), k)

    @property
    def chosen_index(self) -> int:
        return int(np.flatnonzero(self.grid == self.chosen)[0])

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["L", "mean_err", "se", "chosen"])
            for i, (L, e, s) in enumerate(zip(self.grid, self.mean_err, self.se)):
                w.writerow(["inf" if math.isinf(L) else "%.17g" % L, "%.17g" % e, "%.17g" % s,
                            int(i == self.chosen_index)])


def one_se_choice(grid, mean_err, se) -> float:
    """Smallest grid value whose mean error is within one SE of the best."""
    grid = np.asarray(grid, dtype=float)
    mean_err = np.asarray(mean_err, dtype=float)
    se = np.asarray(se, dtype=float)
    best = int(np.argmin(mean_err))
    ok = np.flatnonzero(mean_err <= mean_err[best] + se[best])
    return float(grid[ok.min()])


def default_grid(data: Dataset, config: SolverConfig | None = None, size: int = 15) -> np.ndarray:
    """Log-spaced bounds from 0.1 g to 10 g, g = largest unconstrained subgradient norm, plus +inf."""
    cfg = replace(config or SolverConfig(), variant=Variant())
    model, _ = fit_admm(data, cfg)
    g = float(np.linalg.norm(model.xi, axis=1).max())
    if not g > 0:
        g = 1.0
    return np.concatenate([np.geomspace(0.1 * g, 10 * g, size), [np.inf]])


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0 or np.any(np.isnan(grid)) or np.any(grid <= 0):
        raise ConfigurationError("Lipschitz grid must be non-empty and positive")
    if np.any(np.diff(grid) <= 0):
        raise ConfigurationError("Lipschitz grid must be strictly increasing")
    return grid


def fit_path(data: Dataset, grid, config: SolverConfig | None = None) -> list[PwaModel]:
    """Lipschitz fits over ``grid``, largest bound first, each warm-started from the previous."""
    grid = _check_grid(grid)
    config = config or SolverConfig()
    solver = fit_alm if config.algorithm == "alm" else fit_admm
    models: list[PwaModel | None] = [None] * grid.size
    state = None
    for i in range(grid.size - 1, -1, -1):
        cfg = replace(config, variant=replace(config.variant, lipschitz=grid[i]))
        model, _, state = solver(data, cfg, state=state, return_state=True)
        models[i] = model
    return models


def fold_assignment(n: int, k: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=int)
    for f, idx in enumerate(np.array_split(rng.permutation(n), k)):
        folds[idx] = f
    return folds


def cross_validate_L(data: Dataset, grid=None, k: int = 10, seed=0,
                     config: SolverConfig | None = None, rule: str = "one_se") -> CvResult:
    """k-fold CV of the Lipschitz fit over ``grid``.

    Held-out points are predicted by the max-rule extension of the training fit;
    errors are squared errors on the scale of ``data``. ``rule="one_se"`` picks
    the smallest L within one standard error of the best mean error,
    ``rule="min"`` the minimiser itself.
    """
    if rule not in ("one_se", "min"):
        raise ConfigurationError(f"unknown selection rule {rule!r}")
    if k < 2:
        raise ConfigurationError(f"need at least 2 folds, got {k}")
    if k > data.n:
        raise ConfigurationError(f"{k} folds for {data.n} observations")
    config = config or SolverConfig()
    v = config.variant
    if v.concave:
        # a concave fit of Y is the negated convex fit of -Y; squared errors agree
        signs = tuple(-s for s in v.signs) if v.signs is not None else None
        config = replace(config, variant=Variant(lipschitz=v.lipschitz, signs=signs))
        data = Dataset(data.X, -data.Y)
    grid = _check_grid(default_grid(data, config) if grid is None else grid)
    folds = fold_assignment(data.n, k, seed)
    smallest_train = data.n - np.bincount(folds, minlength=k).max()
    if smallest_train <= data.d:
        raise ConfigurationError(f"a training fold keeps only {smallest_train} points for d={data.d}")
    fold_err = np.empty((grid.size, k))
    for f in range(k):
        test = folds == f
        train = data.subset(~test)
        models = fit_path(train, grid, config)
        for i, model in enumerate(models):
            pred = predict_max_rule(model, data.X[test])
            fold_err[i, f] = float(np.mean((pred - data.Y[test]) ** 2))
    mean_err = fold_err.mean(axis=1)
    se = fold_err.std(axis=1, ddof=1) / math.sqrt(k)
    chosen = one_se_choice(grid, mean_err, se) if rule == "one_se" else float(grid[np.argmin(mean_err)])
    return CvResult(grid, mean_err, se, chosen, folds, fold_err)


@dataclass
class RiskProfile:
    grid: np.ndarray
    risk: np.ndarray  # (replications, len(grid))
    train_err: np.ndarray  # (replications, len(grid))

    @property
    def mean_risk(self) -> np.ndarray:
        return self.risk.mean(axis=0)

    @property
    def mean_train_err(self) -> np.ndarray:
        return self.train_err.mean(axis=0)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["L", "mean_risk", "mean_train_err"])
            for L, r, t in zip(self.grid, self.mean_risk, self.mean_train_err):
                w.writerow(["inf" if math.isinf(L) else "%.17g" % L, "%.17g" % r, "%.17g" % t])


def risk_profile(generator: Callable[[np.random.Generator], tuple[Dataset, np.ndarray]], grid,
                 replications: int, seed=0, config: SolverConfig | None = None) -> RiskProfile:
    """Mean in-sample risk and training error of Lipschitz fits across ``grid``.

    ``generator(rng)`` returns a dataset and the true regression function at its
    covariates, on the same scale as the responses.
    """
    grid = _check_grid(grid)
    rng = np.random.default_rng(seed)
    risk = np.empty((replications, grid.size))
    train = np.empty((replications, grid.size))
    for r in range(replications):
        data, truth = generator(rng)
        for i, model in enumerate(fit_path(data, grid, config)):
            fitted = predict_max_rule(model, data.X)
            risk[r, i] = float(np.mean((fitted - truth) ** 2))
            train[r, i] = float(np.mean((fitted - data.Y) ** 2))
    return RiskProfile(grid, risk, train)
