"""Three-block ADMM and the augmented-Lagrangian method for the convex regression QP.

The QP is

    minimize 1/2 ||Y - theta||^2
    s.t.     theta_j + <X_i - X_j, xi_j> <= theta_i   for all i, j,

split with slacks eta_ij <= 0 and multipliers nu_ij. Matrices indexed
``[i, j]`` hold the (i, j) constraint. The difference operator D with
(D theta)_(i,j) = theta_j - theta_i is never materialised.
"""
from __future__ import annotations

import csv
import hashlib
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ConfigurationError, FitError, NumericalFault
from .model import PwaModel, Variant, compute_kkt_report, constraint_values, d_adjoint

log = logging.getLogger(__name__)

DEFAULT_N_MAX = 12000


def default_n_max() -> int:
    env = os.environ.get("CVXREG_NMAX")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"CVXREG_NMAX must be an integer, got {env!r}") from None
    return DEFAULT_N_MAX


@dataclass(frozen=True)
class AlmSchedule:
    delta0: float = 1e-1
    shrink: float = 0.9954
    warmup_iters: int = 500
    max_outer: int = 3000
    inner_cap: int = 50

    def __post_init__(self):
        if not 0 < self.shrink < 1:
            raise ConfigurationError(f"ALM shrink factor must lie in (0, 1), got {self.shrink}")
        if self.delta0 <= 0 or self.inner_cap < 1 or self.max_outer < 0 or self.warmup_iters < 0:
            raise ConfigurationError("invalid ALM schedule")


@dataclass(frozen=True)
class SolverConfig:
    rho: float | None = None  # None means 1/n
    max_iters: int = 20000
    tol_primal: float = 1e-4
    tol_grad: float = 1e-4
    algorithm: str = "admm"
    alm: AlmSchedule = field(default_factory=AlmSchedule)
    variant: Variant = field(default_factory=Variant)
    n_max: int | None = None

    def __post_init__(self):
        if self.rho is not None and not self.rho > 0:
            raise ConfigurationError(f"rho must be positive, got {self.rho}")
        if not (self.tol_primal > 0 and self.tol_grad > 0):
            raise ConfigurationError("tolerances must be positive")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be at least 1")
        if self.algorithm not in ("admm", "alm"):
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")

    def rho_for(self, n: int) -> float:
        return self.rho if self.rho is not None else 1.0 / n


@dataclass
class ConvergenceTrace:
    iters: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    primal_feasibility: list = field(default_factory=list)
    theta_gradient: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    rho: list = field(default_factory=list)

    def append(self, it, obj, pf, tg, wt, rho):
        self.iters.append(it)
        self.objective.append(obj)
        self.primal_feasibility.append(pf)
        self.theta_gradient.append(tg)
        self.wall_time.append(wt)
        self.rho.append(rho)

    def __len__(self):
        return len(self.iters)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "objective", "primal_feas", "theta_grad", "wall_time_s"])
            for row in zip(self.iters, self.objective, self.primal_feasibility,
                           self.theta_gradient, self.wall_time):
                w.writerow([row[0]] + ["%.17g" % v for v in row[1:]])


@dataclass(frozen=True)
class GramFactors:
    """Per-point Gram matrices G_j = sum_i (X_i - X_j)(X_i - X_j)^T and their Cholesky factors."""

    gram: np.ndarray  # (n, d, d)
    chol: np.ndarray  # (n, d, d) lower triangular, G_j = L_j L_j^T
    chol_inv: np.ndarray  # (n, d, d) inverse of L_j
    checksum: str

    def solve(self, R: np.ndarray) -> np.ndarray:
        """Rows of the result solve G_j x_j = R_j."""
        z = np.einsum("jab,jb->ja", self.chol_inv, R)
        return np.einsum("jba,jb->ja", self.chol_inv, z)

    def matches(self, data: Dataset) -> bool:
        return self.checksum == _checksum(data.X)


def _checksum(X: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(X).tobytes()).hexdigest()


def gram_matrices(X: np.ndarray) -> np.ndarray:
    """G_j for every j in O(n d^2) via the centred second-moment matrix."""
    n = X.shape[0]
    Xc = X - X.mean(axis=0)
    S = Xc.T @ Xc
    return S[None, :, :] + n * np.einsum("ja,jb->jab", Xc, Xc)


def precompute_gram(data: Dataset) -> GramFactors:
    """Factor every G_j once; raises FitError naming the first singular j."""
    G = gram_matrices(data.X)
    ev = np.linalg.eigvalsh(G)
    bad = np.flatnonzero(ev[:, 0] <= 1e-12 * np.maximum(ev[:, -1], 1e-300))
    if bad.size:
        raise FitError(f"per-point Gram matrix for point j={int(bad[0])} is singular "
                       "(duplicate or degenerate design)")
    L = np.linalg.cholesky(G)
    Linv = np.linalg.inv(L)
    return GramFactors(G, L, Linv, _checksum(data.X))


@dataclass
class SolverState:
    theta: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    nu: np.ndarray
    gram: GramFactors
    inner: np.ndarray  # cached <X_i - X_j, xi_j>

    @classmethod
    def initial(cls, data: Dataset, gram: GramFactors | None = None) -> "SolverState":
        n, d = data.n, data.d
        return cls(theta=data.Y.copy(), xi=np.zeros((n, d)), eta=np.zeros((n, n)),
                   nu=np.zeros((n, n)), gram=gram if gram is not None else precompute_gram(data),
                   inner=np.zeros((n, n)))

    def copy(self) -> "SolverState":
        return SolverState(self.theta.copy(), self.xi.copy(), self.eta.copy(), self.nu.copy(),
                           self.gram, self.inner.copy())


def inner_products(X: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """P_ij = <X_i - X_j, xi_j>."""
    P = X @ xi.T
    P -= np.einsum("jk,jk->j", X, xi)[None, :]
    return P


def xi_rhs(state: SolverState, data: Dataset, rho: float) -> np.ndarray:
    """r_j = sum_i Delta_ij * etabar_ij, etabar_ij = nu_ij/rho + eta_ij - (theta_j - theta_i)."""
    E = state.nu * (1.0 / rho)
    E += state.eta
    E -= state.theta[None, :]
    E += state.theta[:, None]
    R = E.T @ data.X
    R -= E.sum(axis=0)[:, None] * data.X
    return R


def update_xi(state: SolverState, data: Dataset, rho: float) -> np.ndarray:
    """Unconstrained subgradient block: xi_j = G_j^{-1} r_j."""
    return state.gram.solve(xi_rhs(state, data, rho))


def theta_rhs(state: SolverState, data: Dataset, rho: float) -> np.ndarray:
    """v = Y + D^T vec(nu) + rho D^T vec(eta - P)."""
    W = state.eta - state.inner
    W *= rho
    W += state.nu
    return data.Y + d_adjoint(W)


def solve_theta_system(v: np.ndarray, rho: float) -> np.ndarray:
    """(I + rho D^T D)^{-1} v via D^T D = 2n I - 2 11^T, in O(n)."""
    n = v.shape[0]
    return (v + 2.0 * rho * v.sum()) / (1.0 + 2.0 * n * rho)


def update_theta(state: SolverState, data: Dataset, rho: float) -> np.ndarray:
    return solve_theta_system(theta_rhs(state, data, rho), rho)


def constraint_matrix(state: SolverState) -> np.ndarray:
    """g_ij = theta_j + <Delta_ij, xi_j> - theta_i from the cached inner products."""
    G = state.inner + state.theta[None, :]
    G -= state.theta[:, None]
    return G


def update_eta(state: SolverState, data: Dataset, rho: float, g: np.ndarray | None = None) -> np.ndarray:
    """eta_ij = min(g_ij - nu_ij / rho, 0)."""
    if g is None:
        g = constraint_matrix(state)
    E = state.nu * (-1.0 / rho)
    E += g
    np.minimum(E, 0.0, out=E)
    return E


def update_dual(state: SolverState, rho: float, g: np.ndarray | None = None) -> np.ndarray:
    """nu += rho * (eta - g); returns the new multipliers."""
    if g is None:
        g = constraint_matrix(state)
    R = state.eta - g
    R *= rho
    R += state.nu
    return R


def _xi_updater(data: Dataset, state: SolverState, variant: Variant):
    if variant.lipschitz is None and (variant.signs is None or not any(variant.signs)):
        return lambda st, rho: st.gram.solve(xi_rhs(st, data, rho))
    from .variants import make_constrained_xi_solver

    solver = make_constrained_xi_solver(state.gram, variant)
    return lambda st, rho: solver(xi_rhs(st, data, rho), st.xi)


def _check_size(data: Dataset, config: SolverConfig) -> None:
    n_max = config.n_max if config.n_max is not None else default_n_max()
    if data.n > n_max:
        raise ConfigurationError(
            f"n={data.n} exceeds the memory ceiling n_max={n_max} "
            f"(dense n x n slack and multiplier matrices need ~{16 * data.n ** 2 / 1e9:.1f} GB); "
            "raise it with CVXREG_NMAX")
    if data.n <= data.d:
        raise ConfigurationError(f"need n > d, got n={data.n}, d={data.d}")
    if np.unique(data.X, axis=0).shape[0] != data.n:
        raise FitError("duplicate covariate rows are not supported at fit time")


class _Runner:
    """Owns one solver state; shared by the ADMM and ALM drivers."""

    def __init__(self, data: Dataset, config: SolverConfig, state: SolverState | None):
        _check_size(data, config)
        self.data = data
        self.config = config
        if state is None:
            state = SolverState.initial(data)
        elif not state.gram.matches(data):
            raise ConfigurationError("warm-start state belongs to a different dataset")
        self.state = state
        self.rho = config.rho_for(data.n)
        self.update_xi = _xi_updater(data, state, config.variant)
        self.trace = ConvergenceTrace()
        self.t0 = time.perf_counter()
        self.g = constraint_matrix(state)

    def primal_sweep(self):
        st, rho = self.state, self.rho
        st.xi = self.update_xi(st, rho)
        st.inner = inner_products(self.data.X, st.xi)
        st.theta = update_theta(st, self.data, rho)
        self.g = constraint_matrix(st)
        st.eta = update_eta(st, self.data, rho, self.g)

    def dual_step(self):
        st = self.state
        st.nu = update_dual(st, self.rho, self.g)

    def record(self, it) -> tuple[float, float]:
        st, data = self.state, self.data
        pf = float(np.linalg.norm(st.eta - self.g) / data.n)
        tg = float(np.linalg.norm(st.theta - data.Y - d_adjoint(st.nu)))
        if not (np.isfinite(pf) and np.isfinite(tg)):
            raise NumericalFault(f"non-finite iterate at iteration {it}")
        obj = 0.5 * float(np.sum((data.Y - st.theta) ** 2))
        self.trace.append(it, obj, pf, tg, time.perf_counter() - self.t0, self.rho)
        return pf, tg

    def converged(self, pf, tg) -> bool:
        return pf <= self.config.tol_primal and tg <= self.config.tol_grad

    def finish(self, iterations, converged, algorithm) -> tuple[PwaModel, ConvergenceTrace]:
        st, data = self.state, self.data
        kkt = compute_kkt_report(st, data, self.rho)
        g = constraint_values(st.theta, st.xi, data.X)
        meta = {
            "algorithm": algorithm,
            "iterations": int(iterations),
            "rho": float(self.rho),
            "converged": bool(converged),
            "kkt": kkt,
            "max_violation": float(max(g.max(), 0.0)),
            "objective": 0.5 * float(np.sum((data.Y - st.theta) ** 2)),
            "wall_time_s": time.perf_counter() - self.t0,
        }
        if not converged:
            log.warning("%s stopped after %d iterations without meeting tolerances "
                        "(primal %.3g, grad %.3g)", algorithm, iterations,
                        kkt.primal_feasibility, kkt.theta_gradient)
        model = PwaModel(st.theta.copy(), st.xi.copy(), data.X, variant=self.config.variant, fit_meta=meta)
        return model, self.trace


def fit_admm(data: Dataset, config: SolverConfig | None = None, state: SolverState | None = None,
             return_state: bool = False):
    """Cycle xi -> theta -> eta -> nu until both stopping residuals meet tolerance.

    Returns ``(model, trace)``, plus the final solver state when
    ``return_state`` is set. Hitting ``max_iters`` is not an error; the model
    is flagged ``converged=False``.
    """
    config = config or SolverConfig()
    run = _Runner(data, config, state)
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        run.primal_sweep()
        run.dual_step()
        if run.converged(*run.record(it)):
            converged = True
            break
    out = run.finish(it, converged, "admm")
    return (*out, run.state) if return_state else out


def fit_alm(data: Dataset, config: SolverConfig | None = None, state: SolverState | None = None,
            return_state: bool = False):
    """Augmented-Lagrangian method with block-coordinate inner solves.

    The first ``warmup_iters`` sweeps are plain ADMM. Each outer step then
    runs xi -> theta -> eta sweeps until the relative displacement of
    (theta, xi) drops below delta (at most ``inner_cap`` sweeps), updates the
    multipliers, and tightens delta <- shrink * delta, rho <- rho / shrink.
    """
    config = config or SolverConfig(algorithm="alm")
    sched = config.alm
    run = _Runner(data, config, state)
    it = 0
    converged = False
    for it in range(1, sched.warmup_iters + 1):
        run.primal_sweep()
        run.dual_step()
        if run.converged(*run.record(it)):
            converged = True
            break
    outer = 0
    if not converged:
        delta = sched.delta0
        st = run.state
        for outer in range(1, sched.max_outer + 1):
            for _ in range(sched.inner_cap):
                prev = np.concatenate([st.theta, st.xi.ravel()])
                run.primal_sweep()
                cur = np.concatenate([st.theta, st.xi.ravel()])
                if np.linalg.norm(cur - prev) <= delta * max(np.linalg.norm(cur), 1e-12):
                    break
            run.dual_step()
            it += 1
            if run.converged(*run.record(it)):
                converged = True
                break
            delta *= sched.shrink
            run.rho /= sched.shrink
    model, trace = run.finish(it, converged, "alm")
    model.fit_meta["outer_iterations"] = int(outer)
    return (model, trace, run.state) if return_state else (model, trace)


def fit(data: Dataset, config: SolverConfig | None = None, **kw):
    config = config or SolverConfig()
    return (fit_alm if config.algorithm == "alm" else fit_admm)(data, config, **kw)


def sweep_times(data: Dataset, sweeps: int = 20, rho: float | None = None) -> np.ndarray:
    """Wall time of each of ``sweeps`` plain ADMM sweeps (tolerances disabled)."""
    cfg = SolverConfig(rho=rho, max_iters=sweeps, tol_primal=1e-300, tol_grad=1e-300)
    _, trace = fit_admm(data, cfg)
    t = np.asarray(trace.wall_time)
    return np.diff(np.concatenate([[0.0], t]))
