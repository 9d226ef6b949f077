import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from cvxreg.admm import (AlmSchedule, SolverConfig, SolverState, constraint_matrix, fit, fit_admm, fit_alm,
                         gram_matrices, inner_products, precompute_gram, solve_theta_system, sweep_times,
                         update_dual, update_eta, update_theta, update_xi)
from cvxreg.data import Dataset, standardize
from cvxreg.errors import ConfigurationError, FitError

TIGHT = SolverConfig(tol_primal=1e-9, tol_grad=1e-9, max_iters=300_000)


def random_state(rng, n, d):
    data = Dataset(rng.uniform(-1, 1, (n, d)), rng.normal(size=n))
    st_ = SolverState.initial(data)
    st_.theta = rng.normal(size=n)
    st_.xi = rng.normal(size=(n, d))
    st_.eta = np.minimum(rng.normal(size=(n, n)), 0)
    st_.nu = -np.abs(rng.normal(size=(n, n)))
    st_.inner = inner_products(data.X, st_.xi)
    return data, st_


def dense_D(n):
    D = np.zeros((n * n, n))
    for i in range(n):
        for j in range(n):
            D[i * n + j, j] += 1
            D[i * n + j, i] -= 1
    return D


# ---------------------------------------------------------------- gram

def test_gram_middle_point_one_d():
    G = gram_matrices(np.array([[0.0], [1.0], [2.0]]))
    assert G[1, 0, 0] == pytest.approx(2.0, abs=1e-14)


def test_gram_matches_direct_sum():
    X = np.random.default_rng(0).normal(size=(9, 3))
    G = gram_matrices(X)
    for j in range(9):
        Dl = X - X[j]
        np.testing.assert_allclose(G[j], Dl.T @ Dl, atol=1e-12)


def test_repeated_point_is_singular():
    with pytest.raises(FitError, match="j="):
        precompute_gram(Dataset(np.array([[1.0], [1.0]]), np.array([0.0, 1.0])))


def test_factor_times_inverse_is_identity():
    data = Dataset(np.random.default_rng(1).normal(size=(50, 3)), np.zeros(50))
    gf = precompute_gram(data)
    prod = np.einsum("jab,jbc->jac", gf.chol, gf.chol_inv)
    np.testing.assert_allclose(prod, np.broadcast_to(np.eye(3), prod.shape), atol=1e-10)


# ---------------------------------------------------------------- xi

def test_xi_update_one_d_formula():
    rng = np.random.default_rng(2)
    data, st_ = random_state(rng, 6, 1)
    rho = 0.7
    xi = update_xi(st_, data, rho)
    x = data.X[:, 0]
    ebar = st_.nu / rho + st_.eta - (st_.theta[None, :] - st_.theta[:, None])
    for j in range(6):
        dl = x - x[j]
        assert xi[j, 0] == pytest.approx((dl @ ebar[:, j]) / (dl @ dl), rel=1e-12)


def test_xi_update_zero_rhs():
    data = Dataset(np.random.default_rng(3).normal(size=(5, 2)), np.zeros(5))
    st_ = SolverState.initial(data)
    st_.theta = np.ones(5)
    np.testing.assert_array_equal(update_xi(st_, data, 1.0), 0.0)


def test_xi_update_matches_dense_least_squares():
    rng = np.random.default_rng(4)
    data, st_ = random_state(rng, 12, 3)
    rho = 0.3
    xi = update_xi(st_, data, rho)
    ebar = st_.nu / rho + st_.eta - (st_.theta[None, :] - st_.theta[:, None])
    for j in range(12):
        ref, *_ = np.linalg.lstsq(data.X - data.X[j], ebar[:, j], rcond=None)
        np.testing.assert_allclose(xi[j], ref, atol=1e-10)


# ---------------------------------------------------------------- theta

def test_theta_constant_fixed_point():
    np.testing.assert_allclose(solve_theta_system(np.full(7, 2.5), 0.9), 2.5, rtol=1e-15)


def test_theta_two_point_by_hand():
    got = solve_theta_system(np.array([1.0, 3.0]), 0.5)
    np.testing.assert_allclose(got, [5 / 3, 7 / 3], rtol=1e-15)
    M = np.eye(2) + 0.5 * dense_D(2).T @ dense_D(2)
    np.testing.assert_allclose(np.linalg.solve(M, [1.0, 3.0]), got, rtol=1e-14)


def test_theta_update_matches_dense_solve():
    rng = np.random.default_rng(5)
    n, rho = 40, 0.37
    data, st_ = random_state(rng, n, 2)
    D = dense_D(n)
    P = st_.inner
    rhs = data.Y + D.T @ (st_.nu.ravel() + rho * (st_.eta - P).ravel())
    ref = np.linalg.solve(np.eye(n) + rho * D.T @ D, rhs)
    np.testing.assert_allclose(update_theta(st_, data, rho), ref, atol=1e-10)


# ---------------------------------------------------------------- eta / nu

def test_eta_clip():
    data = Dataset(np.array([[0.0], [1.0]]), np.zeros(2))
    st_ = SolverState.initial(data)
    g = np.array([[2.0, -2.0], [0.0, 0.0]])
    np.testing.assert_array_equal(update_eta(st_, data, 1.0, g), [[0.0, -2.0], [0.0, 0.0]])


def test_eta_equals_slack_when_feasible():
    X = np.random.default_rng(6).uniform(-1, 1, (8, 2))
    data = Dataset(X, np.sum(X ** 2, axis=1))
    st_ = SolverState.initial(data)
    st_.xi = 2 * X
    st_.inner = inner_products(X, st_.xi)
    g = constraint_matrix(st_)
    assert g.max() <= 1e-15
    np.testing.assert_allclose(update_eta(st_, data, 0.5), g, rtol=0, atol=1e-15)


def test_eta_matches_grid_search():
    rng = np.random.default_rng(7)
    data, st_ = random_state(rng, 5, 2)
    rho = 0.8
    g = constraint_matrix(st_)
    eta = update_eta(st_, data, rho, g)
    grid = np.linspace(-8, 0, 800_001)
    for i in range(5):
        for j in range(5):
            f = st_.nu[i, j] * (grid - g[i, j]) + 0.5 * rho * (grid - g[i, j]) ** 2
            assert eta[i, j] == pytest.approx(grid[np.argmin(f)], abs=1e-5)


def test_dual_update_definition():
    rng = np.random.default_rng(8)
    data, st_ = random_state(rng, 4, 1)
    g = constraint_matrix(st_)
    st_.eta = g.copy()
    np.testing.assert_array_equal(update_dual(st_, 2.0, g), st_.nu)
    st_.eta = g + 0.25
    np.testing.assert_allclose(update_dual(st_, 2.0, g), st_.nu + 0.5, atol=1e-14)


# ---------------------------------------------------------------- drivers

def test_convex_position_one_d():
    data = Dataset(np.array([[0.0], [1.0], [2.0]]), np.array([0.0, 0.0, 2.0]))
    for solver in (fit_admm, fit_alm):
        cfg = SolverConfig(tol_primal=1e-9, tol_grad=1e-9, max_iters=200_000,
                           alm=AlmSchedule(warmup_iters=5))
        model, _ = solver(data, cfg)
        assert model.fit_meta["objective"] < 1e-10
        np.testing.assert_allclose(model.theta, data.Y, atol=1e-6)


@pytest.mark.parametrize("d", [1, 3])
def test_affine_data_is_reproduced(d):
    rng = np.random.default_rng(d)
    X = rng.uniform(-1, 1, (20, d))
    data = Dataset(X, 2 + 3 * X.sum(axis=1))
    model, _ = fit_admm(data, SolverConfig(tol_primal=1e-10, tol_grad=1e-10, max_iters=100_000))
    np.testing.assert_allclose(model.theta, data.Y, atol=1e-6)
    np.testing.assert_allclose(model.xi, 3.0, atol=1e-6)


def oracle_instance(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (6, 1))
    Y = rng.normal(size=6)
    return Dataset(X, Y), oracles.convex_regression_qp(X, Y)[1]


NEAR_DUPLICATE = pytest.mark.xfail(
    strict=True, reason="covariates 0.897 and 0.901 force an optimal slope near 80; "
                        "both solvers stall about 4e-4 above the optimum within 3e5 sweeps")
SEEDS = [0, pytest.param(1, marks=NEAR_DUPLICATE), 2, 3]


@pytest.mark.parametrize("seed", SEEDS)
def test_admm_matches_qp_oracle_n6(seed):
    data, ref = oracle_instance(seed)
    model, _ = fit_admm(data, TIGHT)
    assert model.fit_meta["objective"] == pytest.approx(ref, abs=1e-6)


@pytest.mark.parametrize("seed", SEEDS)
def test_alm_matches_qp_oracle_n6(seed):
    data, ref = oracle_instance(seed)
    model, _ = fit_alm(data, TIGHT)
    assert model.fit_meta["objective"] == pytest.approx(ref, abs=1e-6)


def test_alm_rho_grows_by_schedule_after_warmup():
    rng = np.random.default_rng(9)
    data, _ = standardize(Dataset(rng.uniform(-1, 1, (30, 2)), rng.normal(size=30)))
    cfg = SolverConfig(tol_primal=1e-12, tol_grad=1e-12, algorithm="alm",
                       alm=AlmSchedule(warmup_iters=10, max_outer=40))
    model, trace = fit_alm(data, cfg)
    rho = np.array(trace.rho)
    assert np.all(rho[:10] == rho[0])
    ratios = rho[11:] / rho[10:-1]
    np.testing.assert_allclose(ratios, 1 / 0.9954, rtol=1e-12)
    assert model.fit_meta["outer_iterations"] == 40


def test_converged_fit_report_below_tolerance_and_mean_matching():
    rng = np.random.default_rng(10)
    X = rng.uniform(-1, 1, (80, 2))
    raw = Dataset(X, np.sum(X ** 2, axis=1) + 0.3 * rng.normal(size=80))
    data, _ = standardize(raw)
    cfg = SolverConfig(tol_primal=1e-6, tol_grad=1e-6, max_iters=100_000)
    model, trace = fit_admm(data, cfg)
    rep = model.kkt
    assert model.converged
    assert rep.primal_feasibility <= 1e-6 and rep.theta_gradient <= 1e-6
    assert rep.complementarity <= 1e-6
    assert abs(model.theta.mean() - data.Y.mean()) <= 1e-6
    assert len(trace) == model.fit_meta["iterations"]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_mean_matching_holds_at_every_iterate(seed):
    # D 1 = 0 makes sum(theta) = sum(Y) after every theta update
    rng = np.random.default_rng(seed)
    data = Dataset(rng.uniform(-1, 1, (10, 2)), rng.normal(size=10))
    model, _ = fit_admm(data, SolverConfig(max_iters=7))
    assert abs(model.theta.mean() - data.Y.mean()) <= 1e-12


def test_max_iters_flags_non_convergence():
    rng = np.random.default_rng(11)
    data = Dataset(rng.uniform(-1, 1, (20, 2)), rng.normal(size=20))
    model, trace = fit(data, SolverConfig(max_iters=3))
    assert not model.converged and len(trace) == 3


def test_warm_start_continues_from_state():
    rng = np.random.default_rng(12)
    data = Dataset(rng.uniform(-1, 1, (15, 2)), rng.normal(size=15))
    cfg = SolverConfig(tol_primal=1e-7, tol_grad=1e-7, max_iters=100_000)
    _, _, state = fit_admm(data, cfg, return_state=True)
    model, trace = fit_admm(data, cfg, state=state)
    assert len(trace) <= 2 and model.converged
    other = Dataset(rng.uniform(-1, 1, (15, 2)), rng.normal(size=15))
    with pytest.raises(ConfigurationError):
        fit_admm(other, cfg, state=state)


def test_size_guards(monkeypatch):
    rng = np.random.default_rng(13)
    data = Dataset(rng.normal(size=(30, 2)), rng.normal(size=30))
    with pytest.raises(ConfigurationError, match="CVXREG_NMAX"):
        fit_admm(data, SolverConfig(n_max=20))
    monkeypatch.setenv("CVXREG_NMAX", "10")
    with pytest.raises(ConfigurationError, match="n_max=10"):
        fit_admm(data, SolverConfig())
    with pytest.raises(ConfigurationError, match="n > d"):
        fit_admm(Dataset(rng.normal(size=(3, 3)), rng.normal(size=3)), SolverConfig())
    X = rng.normal(size=(5, 1))
    X[4] = X[0]
    with pytest.raises(FitError, match="duplicate"):
        fit_admm(Dataset(X, rng.normal(size=5)), SolverConfig())


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SolverConfig(rho=0)
    with pytest.raises(ConfigurationError):
        SolverConfig(algorithm="sgd")
    with pytest.raises(ConfigurationError):
        AlmSchedule(shrink=1.2)


def test_trace_csv_and_sweep_times(tmp_path):
    rng = np.random.default_rng(14)
    data = Dataset(rng.uniform(-1, 1, (25, 2)), rng.normal(size=25))
    _, trace = fit_admm(data, SolverConfig(max_iters=5))
    trace.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iter,objective,primal_feas,theta_grad,wall_time_s" and len(lines) == 6
    t = sweep_times(data, sweeps=4)
    assert t.shape == (4,) and np.all(t > 0)
