"""Synthetic regression problems with a prescribed signal-to-noise ratio."""
from __future__ import annotations

import math

import numpy as np

from .data import Dataset
from .errors import InputError

EXAMPLES = ("quad", "quadplus")


def regression_function(example: str, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if example == "quad":
        return np.einsum("ij,ij->i", X, X)
    if example == "quadplus":
        if X.shape[1] < 5:
            raise InputError(f"quadplus needs d >= 5, got d={X.shape[1]}")
        lin = 5 * X[:, 0] + 0.5 * X[:, 1] + X[:, 2]
        return lin ** 2 + np.hypot(X[:, 3], X[:, 4])
    raise InputError(f"unknown example {example!r}; expected one of {EXAMPLES}")


def generate(example: str, n: int, d: int, snr: float = math.inf, seed=None,
             rng: np.random.Generator | None = None) -> tuple[Dataset, np.ndarray]:
    """Draw X ~ Uniform[-1, 1]^d and Y = phi(X) + Gaussian noise.

    The noise variance is Var(phi(X)) / snr using the empirical variance of the
    drawn signal; ``snr = inf`` gives noiseless responses. Returns the dataset
    and the noiseless signal.
    """
    if not snr > 0:
        raise InputError(f"snr must be positive, got {snr}")
    if n < 2 or d < 1:
        raise InputError(f"need n >= 2 and d >= 1, got n={n}, d={d}")
    if example == "quadplus" and d < 5:
        raise InputError(f"quadplus needs d >= 5, got d={d}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, d))
    mu = regression_function(example, X)
    if math.isinf(snr):
        Y = mu.copy()
    else:
        sigma = math.sqrt(float(np.var(mu)) / snr)
        Y = mu + sigma * rng.standard_normal(n)
    return Dataset(X, Y), mu
