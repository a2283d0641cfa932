"""Dense numerical optimization core shared by the identification,
control, and estimation modules.

Two solvers live here:

* ``solve_box_qp``: a primal active-set method for strictly convex
  quadratic programs with simple bounds.  Indefinite Hessians are
  Tikhonov-regularized up to a cap, beyond which the problem is
  rejected.

* ``solve_bounded_nls``: a Gauss-Newton SQP loop for bound-constrained
  nonlinear least squares.  Each iteration solves a box QP built from
  J^T J (with Levenberg damping when needed) and backtracks on the true
  cost, so every iterate stays inside the bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg


class SolverError(RuntimeError):
    """Raised when a solve cannot proceed (bad problem data, limits hit)."""


@dataclass
class BoxQp:
    """min 0.5 x'Hx + g'x  s.t.  lb <= x <= ub."""

    H: np.ndarray
    g: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        n = self.g.size
        if self.H.shape != (n, n):
            raise SolverError("H/g dimension mismatch")
        scale = max(1.0, float(np.abs(self.H).max()))
        if np.abs(self.H - self.H.T).max() > 1e-10 * scale:
            raise SolverError("H must be symmetric to 1e-10")
        if np.any(self.lb > self.ub):
            raise SolverError("lb must not exceed ub")


@dataclass
class SolveReport:
    """Outcome of a QP or NLS solve."""

    x: np.ndarray
    cost: float
    kkt: float
    iterations: int
    status: str
    success: bool


def projected_gradient_norm(x, grad, lb, ub) -> float:
    """Inf-norm of the projected-gradient optimality residual."""
    return float(np.abs(np.clip(x - grad, lb, ub) - x).max(initial=0.0))


def _try_cholesky(H):
    try:
        return scipy.linalg.cho_factor(H, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError:
        return None


def solve_box_qp(p: BoxQp, tol: float = 1e-8,
                 max_iter: Optional[int] = None) -> SolveReport:
    """Primal active-set solve of a box-constrained QP.

    The working set starts from the bounds active at the clipped origin.
    At each iteration the free block is solved by Cholesky; the step is
    truncated at the first blocking bound, and bounds whose multiplier
    has the wrong sign are released one at a time.
    """
    n = p.g.size
    if max_iter is None:
        max_iter = 10 * n + 50
    scale = max(1.0, float(np.abs(p.H).max()))

    # Regularize until the full Hessian is PD; cap at 1e-4 relative.
    H = 0.5 * (p.H + p.H.T)
    reg = 0.0
    while _try_cholesky(H + reg * np.eye(n)) is None:
        reg = max(2.0 * reg, 1e-12 * scale)
        if reg > 1e-4 * scale:
            raise SolverError("Hessian indefinite beyond regularization cap")
    H = H + reg * np.eye(n)
    g, lb, ub = p.g, p.lb, p.ub

    x = np.clip(np.zeros(n), lb, ub)
    at_lo = x <= lb
    at_hi = (x >= ub) & ~at_lo

    for it in range(1, max_iter + 1):
        free = ~(at_lo | at_hi)
        moved = False
        if np.any(free):
            Hff = H[np.ix_(free, free)]
            rhs = -(g[free] + H[np.ix_(free, ~free)] @ x[~free])
            target = scipy.linalg.cho_solve(_try_cholesky(Hff), rhs,
                                            check_finite=False)
            step = target - x[free]
            if np.abs(step).max(initial=0.0) > 1e-14 * (1.0 + np.abs(x).max()):
                moved = True
                fidx = np.flatnonzero(free)
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio_hi = np.where(step > 0, (ub[fidx] - x[fidx]) / step, np.inf)
                    ratio_lo = np.where(step < 0, (lb[fidx] - x[fidx]) / step, np.inf)
                ratios = np.minimum(ratio_hi, ratio_lo)
                kmin = int(np.argmin(ratios))
                alpha = min(1.0, max(0.0, float(ratios[kmin])))
                x[fidx] += alpha * step
                if ratios[kmin] < 1.0:
                    i = int(fidx[kmin])
                    if step[kmin] > 0:
                        x[i] = ub[i]
                        at_hi[i] = True
                    else:
                        x[i] = lb[i]
                        at_lo[i] = True
        if not moved:
            # Full step taken (or no free variables): check multipliers.
            grad = H @ x + g
            bad_lo = at_lo & (grad < -tol)
            bad_hi = at_hi & (grad > tol)
            if not (np.any(bad_lo) or np.any(bad_hi)):
                kkt = projected_gradient_norm(x, grad, lb, ub)
                cost = float(0.5 * x @ H @ x + g @ x)
                return SolveReport(x=x, cost=cost, kkt=kkt, iterations=it,
                                   status="kkt", success=True)
            viol = np.where(bad_lo | bad_hi, np.abs(grad), -np.inf)
            worst = int(np.argmax(viol))
            at_lo[worst] = False
            at_hi[worst] = False

    raise SolverError(f"box QP iteration limit ({max_iter}) exceeded")


@dataclass
class NlsProblem:
    """Bound-constrained nonlinear least squares: min 0.5 ||fun(x)||^2.

    ``jac`` may be omitted, in which case central finite differences are
    used.  ``fun_jac`` optionally evaluates residual and Jacobian in one
    pass (cheaper when both come from the same rollout).
    """

    fun: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    fun_jac: Optional[Callable[[np.ndarray], tuple]] = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        if np.any(self.x0 < self.lb) or np.any(self.x0 > self.ub):
            raise SolverError("x0 must lie within the bounds")


@dataclass
class NlsOptions:
    max_iter: int = 100
    kkt_tol: float = 1e-6
    step_tol: float = 1e-8
    armijo: float = 1e-4
    max_backtracks: int = 12
    damping_cap: float = 1e10


def _jacobian_fd_in_box(fun, x, lb, ub, h):
    """Finite differences that never evaluate outside [lb, ub]; falls back
    to one-sided steps at the bounds."""
    cols = []
    for j in range(x.size):
        hj = h * (1.0 + abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] = min(x[j] + hj, ub[j])
        xm[j] = max(x[j] - hj, lb[j])
        span = xp[j] - xm[j]
        if span == 0.0:  # variable pinned by lb == ub
            cols.append(np.zeros_like(np.asarray(fun(x), dtype=float)))
        else:
            cols.append((np.asarray(fun(xp)) - np.asarray(fun(xm))) / span)
    return np.column_stack(cols)


def _eval_rj(p: NlsProblem, x, h_fd=1e-6):
    if p.fun_jac is not None:
        return p.fun_jac(x)
    r = p.fun(x)
    if p.jac is not None:
        return r, p.jac(x)
    return r, _jacobian_fd_in_box(p.fun, x, p.lb, p.ub, h_fd)


def solve_bounded_nls(p: NlsProblem, opts: NlsOptions = NlsOptions()) -> SolveReport:
    """Gauss-Newton SQP with box bounds, Levenberg damping, and an
    Armijo backtracking line search.  Accepted iterates never increase
    the cost and always satisfy the bounds."""
    x = p.x0.copy()
    r, J = _eval_rj(p, x)
    cost = 0.5 * float(r @ r)
    lam = 0.0
    status = "max-iterations"
    it = 0

    for it in range(1, opts.max_iter + 1):
        g = J.T @ r
        kkt = projected_gradient_norm(x, g, p.lb, p.ub)
        if kkt <= opts.kkt_tol:
            status = "kkt"
            break

        H = J.T @ J
        diag_scale = max(float(np.max(np.diag(H))), 1e-12)
        accepted = False
        while not accepted:
            Hd = H if lam == 0.0 else H + lam * np.eye(x.size)
            qp = BoxQp(H=Hd, g=g, lb=p.lb - x, ub=p.ub - x)
            step = solve_box_qp(qp, tol=min(1e-10, opts.kkt_tol * 1e-2)).x
            step_norm = float(np.abs(step).max(initial=0.0))
            if step_norm <= opts.step_tol * (1.0 + np.abs(x).max()):
                status = "small-step"
                break
            slope = float(g @ step)  # < 0 by construction of the QP
            alpha = 1.0
            for _ in range(opts.max_backtracks):
                x_try = np.clip(x + alpha * step, p.lb, p.ub)
                r_try = p.fun(x_try)
                cost_try = 0.5 * float(r_try @ r_try)
                if cost_try <= cost + opts.armijo * alpha * slope:
                    x, cost = x_try, cost_try
                    accepted = True
                    break
                alpha *= 0.5
            if accepted:
                lam = 0.0 if lam < 1e-10 * diag_scale else lam / 3.0
            else:
                lam = max(lam * 10.0, 1e-8 * diag_scale)
                if lam > opts.damping_cap * diag_scale:
                    status = "stalled"
                    break
        if not accepted:
            break
        r, J = _eval_rj(p, x)
        cost = 0.5 * float(r @ r)

    g = J.T @ r
    kkt = projected_gradient_norm(x, g, p.lb, p.ub)
    success = status in ("kkt", "small-step") or (status == "stalled" and kkt < 1e2 * opts.kkt_tol)
    return SolveReport(x=x, cost=cost, kkt=kkt, iterations=it,
                       status=status, success=success)


def jacobian_fd(f: Callable[[np.ndarray], np.ndarray], x, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian, column j = (f(x+h e_j) - f(x-h e_j)) / 2h."""
    if h <= 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * h))
    return np.column_stack(cols)
