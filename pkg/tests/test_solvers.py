import itertools

import numpy as np
import pytest

from asvsim.solvers import (
    BoxQp,
    NlsOptions,
    NlsProblem,
    SolverError,
    jacobian_fd,
    solve_bounded_nls,
    solve_box_qp,
)


# ------------------------------------------------------------ QP oracle

def brute_force_box_qp(H, g, lb, ub, tol=1e-9):
    """Enumerate every lower/free/upper pattern and return the best KKT point.

    Exponential in n; oracle use only.
    """
    n = g.size
    best_x, best_cost = None, np.inf
    for pattern in itertools.product((-1, 0, 1), repeat=n):
        pattern = np.array(pattern)
        x = np.empty(n)
        x[pattern == -1] = lb[pattern == -1]
        x[pattern == 1] = ub[pattern == 1]
        free = pattern == 0
        if np.any(free):
            Hff = H[np.ix_(free, free)]
            rhs = -(g[free] + H[np.ix_(free, ~free)] @ x[~free])
            try:
                x[free] = np.linalg.solve(Hff, rhs)
            except np.linalg.LinAlgError:
                continue
        if np.any(x < lb - tol) or np.any(x > ub + tol):
            continue
        grad = H @ x + g
        if np.any(grad[pattern == -1] < -tol) or np.any(grad[pattern == 1] > tol):
            continue
        cost = 0.5 * x @ H @ x + g @ x
        if cost < best_cost:
            best_cost, best_x = cost, x
    return best_x, best_cost


def random_box_qp(rng, n=5):
    A = rng.normal(size=(n, n))
    H = A.T @ A + 0.1 * np.eye(n)
    g = rng.normal(size=n) * 2.0
    lo = rng.uniform(-2.0, 0.0, size=n)
    hi = rng.uniform(0.0, 2.0, size=n)
    return BoxQp(H=H, g=g, lb=lo, ub=hi)


# ------------------------------------------------------------- QP tests

def test_qp_interior_minimum():
    rep = solve_box_qp(BoxQp(np.eye(2), np.zeros(2), -np.ones(2), np.ones(2)))
    np.testing.assert_allclose(rep.x, [0.0, 0.0], atol=1e-12)
    assert rep.success


def test_qp_clipped_minimum():
    # for diagonal H the box solution is the clipped unconstrained one
    rep = solve_box_qp(BoxQp(np.eye(2), np.array([-1.0, -1.0]),
                             -0.5 * np.ones(2), 0.5 * np.ones(2)))
    np.testing.assert_allclose(rep.x, [0.5, 0.5], atol=1e-12)


def test_qp_matches_enumeration_oracle(rng):
    for _ in range(60):
        qp = random_box_qp(rng)
        rep = solve_box_qp(qp, tol=1e-10)
        x_star, cost_star = brute_force_box_qp(qp.H, qp.g, qp.lb, qp.ub)
        assert x_star is not None
        np.testing.assert_allclose(rep.x, x_star, atol=1e-8)


def test_qp_projected_gradient_optimality(rng):
    for _ in range(40):
        qp = random_box_qp(rng, n=8)
        rep = solve_box_qp(qp, tol=1e-9)
        grad = qp.H @ rep.x + qp.g
        pg = np.clip(rep.x - grad, qp.lb, qp.ub) - rep.x
        assert np.abs(pg).max() <= 1e-9
        assert np.all(rep.x >= qp.lb - 1e-12)
        assert np.all(rep.x <= qp.ub + 1e-12)


def test_qp_semidefinite_is_regularized():
    H = np.array([[1.0, 0.0], [0.0, 0.0]])  # PSD, singular
    rep = solve_box_qp(BoxQp(H, np.array([1.0, 1.0]), -np.ones(2), np.ones(2)))
    assert rep.success
    np.testing.assert_allclose(rep.x, [-1.0, -1.0], atol=1e-6)


def test_qp_rejects_indefinite():
    H = np.array([[1.0, 0.0], [0.0, -5.0]])
    with pytest.raises(SolverError):
        solve_box_qp(BoxQp(H, np.zeros(2), -np.ones(2), np.ones(2)))


def test_qp_rejects_asymmetric():
    H = np.array([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(SolverError):
        BoxQp(H, np.zeros(2), -np.ones(2), np.ones(2))


def test_qp_rejects_crossed_bounds():
    with pytest.raises(SolverError):
        BoxQp(np.eye(2), np.zeros(2), np.ones(2), -np.ones(2))


def test_qp_iteration_limit():
    qp = BoxQp(np.eye(3), np.ones(3), -np.ones(3), np.ones(3))
    with pytest.raises(SolverError):
        solve_box_qp(qp, max_iter=0)


def test_qp_fixed_variables():
    lb = np.array([0.3, -1.0])
    ub = np.array([0.3, 1.0])  # first variable pinned
    rep = solve_box_qp(BoxQp(np.eye(2), np.zeros(2), lb, ub))
    np.testing.assert_allclose(rep.x, [0.3, 0.0], atol=1e-12)


# ------------------------------------------------------------ NLS tests

def test_nls_linear_residual_inside_bounds():
    c = np.array([0.3, -0.4])
    calls = {"n": 0}

    def fun(x):
        calls["n"] += 1
        return x - c

    p = NlsProblem(fun=fun, jac=lambda x: np.eye(2), x0=np.zeros(2),
                   lb=-np.ones(2), ub=np.ones(2))
    rep = solve_bounded_nls(p)
    np.testing.assert_allclose(rep.x, c, atol=1e-10)
    assert rep.iterations <= 2
    assert rep.success


def test_nls_linear_residual_outside_bounds():
    # clipped least squares oracle: optimum sits at the nearest bound
    c = np.array([2.0, -3.0])
    p = NlsProblem(fun=lambda x: x - c, jac=lambda x: np.eye(2),
                   x0=np.zeros(2), lb=-np.ones(2), ub=np.ones(2))
    rep = solve_bounded_nls(p)
    np.testing.assert_allclose(rep.x, [1.0, -1.0], atol=1e-10)


def test_nls_rosenbrock_in_box():
    def fun(x):
        return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])

    def jac(x):
        return np.array([[-20.0 * x[0], 10.0], [-1.0, 0.0]])

    p = NlsProblem(fun=fun, jac=jac, x0=np.array([-1.2, 1.0]),
                   lb=np.array([-2.0, -2.0]), ub=np.array([2.0, 2.0]))
    rep = solve_bounded_nls(p, NlsOptions(kkt_tol=1e-10))
    np.testing.assert_allclose(rep.x, [1.0, 1.0], atol=1e-6)
    assert rep.success


def test_nls_iterates_stay_feasible_and_cost_monotone():
    lb = np.array([-0.5, -0.5])
    ub = np.array([0.5, 0.5])
    seen = []

    def fun(x):
        seen.append(x.copy())
        return np.array([5.0 * (x[1] - x[0] ** 2), 1.0 - x[0], 0.3 * x[1]])

    p = NlsProblem(fun=fun, x0=np.array([-0.4, 0.4]), lb=lb, ub=ub)
    rep = solve_bounded_nls(p)
    for x in seen:
        assert np.all(x >= lb - 1e-12) and np.all(x <= ub + 1e-12)
    assert np.all(rep.x >= lb - 1e-9) and np.all(rep.x <= ub + 1e-9)


def test_nls_rejects_infeasible_start():
    with pytest.raises(SolverError):
        NlsProblem(fun=lambda x: x, x0=np.array([2.0]),
                   lb=np.array([-1.0]), ub=np.array([1.0]))


def test_nls_fd_jacobian_fallback():
    c = np.array([0.2, 0.1, -0.3])
    p = NlsProblem(fun=lambda x: np.sin(x) - c, x0=np.zeros(3),
                   lb=-np.ones(3), ub=np.ones(3))
    rep = solve_bounded_nls(p)
    np.testing.assert_allclose(np.sin(rep.x), c, atol=1e-8)


# ------------------------------------------------------- finite differences

def test_fd_exact_for_linear():
    A = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    J = jacobian_fd(lambda x: A @ x, np.array([0.3, -0.7]), 1e-4)
    np.testing.assert_allclose(J, A, atol=1e-12)


def test_fd_second_order_convergence():
    # halving h divides the error by ~4 for a smooth cubic
    f = lambda x: np.array([x[0] ** 3])
    x = np.array([1.0])
    errs = []
    for h in (1e-2, 5e-3, 2.5e-3):
        errs.append(abs(jacobian_fd(f, x, h)[0, 0] - 3.0))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


def test_fd_rejects_bad_step():
    with pytest.raises(ValueError):
        jacobian_fd(lambda x: x, np.zeros(2), 0.0)
