"""Constrained subgradient blocks: Lipschitz (norm-ball) and coordinate-monotone fits.

Each xi_j minimizes xi^T G_j xi - 2 <r_j, xi> (equivalently ||A_j xi - b_j||^2
with A_j^T A_j = G_j, A_j^T b_j = r_j) under the variant's constraints.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .errors import DegenerateInputError, InputError, NumericalFault
from .model import PwaModel, Variant

NEWTON_MAX = 200
BISECT_MAX = 400
CD_TOL = 1e-10
CD_FLOOR = 1e-12
CD_MAX_SWEEPS = 10000


def parse_signs(spec: str | None, d: int | None = None) -> tuple[int, ...] | None:
    """Parse ``"+,-,0"`` into (1, -1, 0)."""
    if spec is None or spec == "":
        return None
    table = {"+": 1, "-": -1, "0": 0, "1": 1, "-1": -1, "+1": 1}
    try:
        signs = tuple(table[t.strip()] for t in spec.split(","))
    except KeyError:
        raise InputError(f"bad sign pattern {spec!r}; use comma-separated +, - or 0") from None
    if d is not None and len(signs) != d:
        raise InputError(f"sign pattern has {len(signs)} entries, data has d={d}")
    return signs


# ------------------------------------------------------------ ball-constrained LS

@dataclass(frozen=True)
class LipschitzSubproblem:
    """Thin SVD A = U diag(gamma) V^T of the stacked differences for one j, plus the bound L."""

    U: np.ndarray
    gamma: np.ndarray
    V: np.ndarray
    L: float

    @classmethod
    def from_matrix(cls, A, L: float) -> "LipschitzSubproblem":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if not L > 0:
            raise InputError(f"Lipschitz bound must be positive, got {L}")
        U, gamma, Vt = np.linalg.svd(A, full_matrices=False)
        return cls(U, gamma, Vt.T, float(L))


def _ball_lambda(s, gam2, L, path=None):
    """Solve sum_k s_k^2 / (gam2_k + lam)^2 = L^2 for lam > 0, row-wise.

    All rows must satisfy ||xi(0)|| > L. Safeguarded Newton on
    g(lam) = ||xi(lam)||^2 - L^2 inside the bracket [lo, hi], then bisection
    for any row Newton failed to settle.
    """
    m = s.shape[0]
    s2 = s * s
    L2 = L * L
    lo = np.zeros(m)
    hi = np.sqrt(s2.sum(axis=1)) / L
    gmax = np.sqrt(gam2.max(axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        cnorm = np.sqrt((s2 / np.where(gam2 > 0, gam2, np.inf)).sum(axis=1))
    lam = np.clip(gmax * (cnorm / L - gmax), lo, hi)
    todo = np.ones(m, dtype=bool)

    def norm2(lam_, rows):
        return (s2[rows] / (gam2[rows] + lam_[:, None]) ** 2).sum(axis=1)

    for _ in range(NEWTON_MAX):
        rows = np.flatnonzero(todo)
        if rows.size == 0:
            break
        lr = lam[rows]
        q = gam2[rows] + lr[:, None]
        g = (s2[rows] / q ** 2).sum(axis=1) - L2
        if path is not None:
            path.append((lr.copy(), g.copy()))
        done = np.abs(np.sqrt(np.maximum(g + L2, 0.0)) - L) <= 1e-8 * L
        pos = g > 0
        lo[rows] = np.where(pos, np.maximum(lo[rows], lr), lo[rows])
        hi[rows] = np.where(~pos, np.minimum(hi[rows], lr), hi[rows])
        dg = -2.0 * (s2[rows] / q ** 3).sum(axis=1)
        step = lr - g / dg
        bad = ~((step > lo[rows]) & (step < hi[rows])) | ~np.isfinite(step)
        step = np.where(bad, 0.5 * (lo[rows] + hi[rows]), step)
        lam[rows] = np.where(done, lr, step)
        todo[rows[done]] = False

    for _ in range(BISECT_MAX):
        rows = np.flatnonzero(todo)
        if rows.size == 0:
            break
        mid = 0.5 * (lo[rows] + hi[rows])
        g = norm2(mid, rows) - L2
        done = np.abs(np.sqrt(np.maximum(g + L2, 0.0)) - L) <= 1e-8 * L
        lo[rows] = np.where(g > 0, mid, lo[rows])
        hi[rows] = np.where(g > 0, hi[rows], mid)
        lam[rows] = mid
        todo[rows[done]] = False
    if todo.any():
        raise NumericalFault("norm-ball least-squares root finding did not converge")
    return lam


def _ball_solution(s, gam2, V, L):
    """Row-wise minimizers given s = Gamma c = V^T A^T b; returns (xi, lam)."""
    ratio0 = s / gam2
    xi0_norm = np.sqrt((ratio0 ** 2).sum(axis=1))
    lam = np.zeros(s.shape[0])
    active = xi0_norm > L
    if active.any():
        lam[active] = _ball_lambda(s[active], gam2[active], L)
    coef = s / (gam2 + lam[:, None])
    xi = np.einsum("jab,jb->ja", V, coef)
    nrm = np.linalg.norm(xi, axis=1)
    over = nrm > L
    xi[over] *= (L / nrm[over])[:, None]
    return xi, lam


def solve_ball_ls(sub: LipschitzSubproblem, b, return_path: bool = False):
    """argmin ||A xi - b||^2 subject to ||xi||_2 <= L; returns (xi, lambda).

    With ``return_path`` also returns the list of (lambda, g(lambda)) Newton iterates.
    """
    b = np.asarray(b, dtype=float).reshape(-1)
    c = sub.U.T @ b
    s = (sub.gamma * c)[None, :]
    gam2 = (sub.gamma ** 2)[None, :]
    if np.any(gam2 <= 0):
        raise DegenerateInputError("rank-deficient subproblem matrix")
    path = [] if return_path else None
    xi0 = sub.V @ (c / sub.gamma)
    if np.linalg.norm(xi0) <= sub.L:
        out = (xi0, 0.0)
    else:
        lam = _ball_lambda(s, gam2, sub.L, path)[0]
        xi = sub.V @ (s[0] / (gam2[0] + lam))
        nrm = np.linalg.norm(xi)
        if nrm > sub.L:
            xi *= sub.L / nrm
        out = (xi, float(lam))
    return (*out, path) if return_path else out


# ----------------------------------------------------- sign-constrained quadratic

def _cd_batch(Q, a, signs, U0, tol=CD_TOL, max_sweeps=CD_MAX_SWEEPS):
    """Cyclic coordinate descent for min u^T Q u + <a, u> with per-coordinate sign constraints.

    Q: (m, d, d), a: (m, d), U0: (m, d) warm starts. Nonpositive coordinates
    are handled by flipping their sign; free coordinates are not clipped.
    """
    signs = np.asarray(signs, dtype=int)
    flip = np.where(signs < 0, -1.0, 1.0)
    Qf = Q * flip[None, :, None] * flip[None, None, :]
    af = a * flip
    u = U0 * flip
    clip = signs != 0
    u[:, clip] = np.maximum(u[:, clip], 0.0)
    diag = np.einsum("jkk->jk", Qf)
    if np.any(diag[:, clip] <= 0):
        raise DegenerateInputError("zero curvature on a sign-constrained coordinate (degenerate design)")
    grad = 2.0 * np.einsum("jab,jb->ja", Qf, u) + af
    d = Q.shape[1]
    active = np.arange(Q.shape[0])
    for _ in range(max_sweeps):
        if active.size == 0:
            break
        ua = u[active]
        ga = grad[active]
        Qa = Qf[active]
        da = diag[active]
        old = ua.copy()
        for k in range(d):
            atil = ga[:, k] - 2.0 * da[:, k] * ua[:, k]
            new = -atil / (2.0 * da[:, k])
            if clip[k]:
                new = np.maximum(new, 0.0)
            delta = new - ua[:, k]
            ua[:, k] = new
            ga += 2.0 * Qa[:, :, k] * delta[:, None]
        u[active] = ua
        grad[active] = ga
        step = np.linalg.norm(ua - old, axis=1)
        done = step <= tol * np.linalg.norm(old, axis=1) + CD_FLOOR
        active = active[~done]
    return u * flip


def nnls_objective(Q, a, u) -> float:
    return float(u @ Q @ u + a @ u)


def solve_nnls_cd(Q, a, signs, warm=None, tol: float = CD_TOL, max_sweeps: int = CD_MAX_SWEEPS) -> np.ndarray:
    """min u^T Q u + <a, u> subject to the sign pattern, by cyclic coordinate descent."""
    Q = np.asarray(Q, dtype=float)
    a = np.asarray(a, dtype=float).reshape(-1)
    d = a.shape[0]
    signs = tuple(signs) if signs is not None else (1,) * d
    if len(signs) != d:
        raise InputError(f"sign pattern has {len(signs)} entries, problem has d={d}")
    warm = np.zeros(d) if warm is None else np.asarray(warm, dtype=float).reshape(-1)
    return _cd_batch(Q[None], a[None], signs, warm[None].copy(), tol, max_sweeps)[0]


def _ball_signed_batch(Q, R, signs, L, warm, tol=1e-10, max_iter=100):
    """Sign constraints plus ||u|| <= L via a ridge shift mu chosen so that ||u(mu)|| = L.

    ||u(mu)|| is nonincreasing in mu; the root is bracketed in [0, ||R|| / L]
    and found by the Illinois variant of regula falsi. Experimental; the two
    constraint families are combined only here.
    """
    u = _cd_batch(Q, -2.0 * R, signs, warm.copy())
    nrm = np.linalg.norm(u, axis=1)
    over = np.flatnonzero(nrm > L)
    if over.size == 0:
        return u
    eye = np.eye(Q.shape[1])[None]
    Qo, Ro = Q[over], R[over]

    def solve(mu, start):
        return _cd_batch(Qo + mu[:, None, None] * eye, -2.0 * Ro, signs, start.copy())

    lo = np.zeros(over.size)
    f_lo = nrm[over] - L
    hi = np.linalg.norm(Ro, axis=1) / L
    cur = solve(hi, u[over])
    f_hi = np.linalg.norm(cur, axis=1) - L
    side = np.zeros(over.size, dtype=int)
    for _ in range(max_iter):
        mu = np.where(f_lo - f_hi > 0, (lo * f_hi - hi * f_lo) / np.minimum(f_hi - f_lo, -1e-300), 0.5 * (lo + hi))
        mu = np.where((mu > lo) & (mu < hi), mu, 0.5 * (lo + hi))
        cur = solve(mu, cur)
        f = np.linalg.norm(cur, axis=1) - L
        pos = f > 0
        # Illinois: halve the stale endpoint's value when the same side moves twice
        f_hi = np.where(pos & (side == 1), 0.5 * f_hi, f_hi)
        f_lo = np.where(~pos & (side == -1), 0.5 * f_lo, f_lo)
        lo, f_lo = np.where(pos, mu, lo), np.where(pos, f, f_lo)
        hi, f_hi = np.where(pos, hi, mu), np.where(pos, f_hi, f)
        side = np.where(pos, 1, -1)
        if np.all(np.abs(f) <= tol * L) or np.all(hi - lo <= 1e-14 * (1 + hi)):
            break
    n2 = np.linalg.norm(cur, axis=1)
    scale = np.minimum(1.0, L / np.maximum(n2, 1e-300))
    u[over] = cur * scale[:, None]
    return u


# ------------------------------------------------------------- ADMM integration

def make_constrained_xi_solver(gram, variant: Variant):
    """Return ``solve(R, warm) -> xi`` for the variant; offline work is done here once."""
    L = variant.lipschitz
    signs = variant.signs if variant.signs is not None and any(variant.signs) else None
    G = gram.gram
    if signs is None and L is not None:
        gam2, V = np.linalg.eigh(G)
        gam2 = np.maximum(gam2, 0.0)

        def solve(R, warm):
            s = np.einsum("jba,jb->ja", V, R)
            return _ball_solution(s, gam2, V, L)[0]
        return solve
    if signs is not None and L is None:
        return lambda R, warm: _cd_batch(G, -2.0 * R, signs, np.array(warm, dtype=float))
    if signs is not None and L is not None:
        return lambda R, warm: _ball_signed_batch(G, R, signs, L, np.array(warm, dtype=float))
    return lambda R, warm: gram.solve(R)


def update_xi_lipschitz(state, data: Dataset, rho: float, L: float) -> np.ndarray:
    from .admm import xi_rhs

    solver = make_constrained_xi_solver(state.gram, Variant(lipschitz=L))
    return solver(xi_rhs(state, data, rho), state.xi)


def update_xi_monotone(state, data: Dataset, rho: float, signs) -> np.ndarray:
    from .admm import xi_rhs

    solver = make_constrained_xi_solver(state.gram, Variant(signs=tuple(signs)))
    return solver(xi_rhs(state, data, rho), state.xi)


def concave_adapter(data: Dataset, config, return_state: bool = False):
    """Fit a concave model by fitting -Y as convex and negating (theta, xi).

    Sign patterns refer to the concave function and are flipped for the convex fit.
    A returned solver state belongs to the negated problem.
    """
    from .admm import fit

    v = config.variant
    signs = tuple(-s for s in v.signs) if v.signs is not None else None
    cfg = replace(config, variant=Variant(lipschitz=v.lipschitz, signs=signs))
    model, trace, *rest = fit(Dataset(data.X, -data.Y), cfg, return_state=return_state)
    out = PwaModel(-model.theta, -model.xi, model.anchors,
                   variant=Variant(lipschitz=v.lipschitz, signs=v.signs, concave=True),
                   standardization=model.standardization, fit_meta=model.fit_meta)
    return (out, trace, *rest)


def fit_variant(data: Dataset, config, return_state: bool = False):
    """Fit honouring ``config.variant`` including the concave flag."""
    from .admm import fit

    if config.variant.concave:
        return concave_adapter(data, config, return_state=return_state)
    return fit(data, config, return_state=return_state)
