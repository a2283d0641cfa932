"""Receding-horizon tracking controller.

Each cycle solves a finite-horizon least-squares tracking problem over
the thruster-force sequence (single shooting: the states are eliminated
through the RK4 model, so the decision vector carries only controls and
the QP subproblems stay purely box-constrained).  Velocity limits enter
as one-sided quadratic penalties; force limits are hard bounds.  The
solve is warm-started from the shifted previous solution and capped at
a few SQP iterations per cycle to hold a fixed control rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    ControlInput,
    HydroParams,
    ThrusterGeometry,
    VesselState,
    step_rk4_array,
    step_rk4_with_jacobians,
)
from .geometry import wrap_angle
from .solvers import NlsOptions, NlsProblem, SolveReport, solve_bounded_nls

INF6 = np.full(6, np.inf)


@dataclass
class NmpcConfig:
    params: HydroParams
    geom: ThrusterGeometry
    n_steps: int = 40
    dt: float = 0.1
    wq: np.ndarray = field(default_factory=lambda: np.array([200.0, 200.0, 100.0, 10.0, 10.0, 10.0]))
    wn: np.ndarray = field(default_factory=lambda: np.array([1000.0, 1000.0, 500.0, 50.0, 50.0, 150.0]))
    wu: np.ndarray = field(default_factory=lambda: np.ones(4))
    u_min: np.ndarray = field(default_factory=lambda: np.full(4, -50.0))
    u_max: np.ndarray = field(default_factory=lambda: np.full(4, 50.0))
    # velocity envelope as soft constraints; positions unconstrained
    q_soft_min: np.ndarray = field(default_factory=lambda: np.array([-np.inf, -np.inf, -np.inf, -5.0, -5.0, -3.0]))
    q_soft_max: np.ndarray = field(default_factory=lambda: np.array([np.inf, np.inf, np.inf, 5.0, 5.0, 3.0]))
    soft_weight: float = 1e4
    sqp_iters: int = 3       # per-cycle cap, real-time iteration style
    kkt_tol: float = 1e-6

    def __post_init__(self):
        for name in ("wq", "wn", "wu", "u_min", "u_max", "q_soft_min", "q_soft_max"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.n_steps < 2:
            raise ValueError("horizon must span at least 2 steps")
        if np.any(self.wq < 0) or np.any(self.wu < 0) or np.any(self.wn < 0):
            raise ValueError("weights must be non-negative")
        if np.any(self.wq[:3] <= 0) or np.any(self.wn[:3] <= 0):
            raise ValueError("pose weights must be positive")
        if np.any(self.u_min >= self.u_max):
            raise ValueError("u_min must be below u_max")

    @property
    def horizon_seconds(self) -> float:
        return self.n_steps * self.dt


def default_config(params: HydroParams, geom: ThrusterGeometry) -> NmpcConfig:
    """Tracking weights and force limits used throughout the experiments:
    a 4 s horizon at 10 Hz and 50 N thruster bounds."""
    return NmpcConfig(params=params, geom=geom)


@dataclass
class ReferenceWindow:
    """State references over the horizon (N+1) and force references (N)."""

    q_ref: np.ndarray
    u_ref: np.ndarray

    def __post_init__(self):
        self.q_ref = np.asarray(self.q_ref, dtype=float)
        self.u_ref = np.asarray(self.u_ref, dtype=float)
        if self.q_ref.shape[0] != self.u_ref.shape[0] + 1:
            raise ValueError("need N+1 state references and N control references")
        self.q_ref[:, 2] = wrap_angle(self.q_ref[:, 2])

    @staticmethod
    def hold(q, n_steps: int) -> "ReferenceWindow":
        """Stationary window holding a single target state."""
        return ReferenceWindow(np.tile(np.asarray(q, dtype=float), (n_steps + 1, 1)),
                               np.zeros((n_steps, 4)))


@dataclass
class NmpcSolution:
    control: ControlInput          # first element of the optimized sequence
    controls: np.ndarray           # (N, 4)
    states: np.ndarray             # (N+1, 6) predicted under the model
    cost: float
    report: SolveReport | None
    degraded: bool = False
    soft_active: int = 0           # predicted states touching the envelope


def _rollout(q0, U, cfg: NmpcConfig):
    xi = cfg.params.as_array()
    states = np.empty((cfg.n_steps + 1, 6))
    states[0] = q0
    q = q0
    for k in range(cfg.n_steps):
        q = step_rk4_array(q, U[k], cfg.dt, xi, cfg.geom)
        states[k + 1] = q
    return states


def _rollout_with_sens(q0, U, cfg: NmpcConfig):
    xi = cfg.params.as_array()
    n = 4 * cfg.n_steps
    states = np.empty((cfg.n_steps + 1, 6))
    sens = np.zeros((cfg.n_steps + 1, 6, n))
    states[0] = q0
    q = q0
    S = np.zeros((6, n))
    for k in range(cfg.n_steps):
        q, A, B = step_rk4_with_jacobians(q, U[k], cfg.dt, xi, cfg.geom)
        S = A @ S
        S[:, 4 * k:4 * k + 4] += B
        states[k + 1] = q
        sens[k + 1] = S
    return states, sens


def _stack_residuals(states, U, refs: ReferenceWindow, cfg: NmpcConfig, sens=None):
    N = cfg.n_steps
    sq, sn, su = np.sqrt(cfg.wq), np.sqrt(cfg.wn), np.sqrt(cfg.wu)
    dq = states - refs.q_ref
    dq[:, 2] = wrap_angle(dq[:, 2])

    blocks = [(dq[1:N] * sq).reshape(-1),
              dq[N] * sn,
              ((U - refs.u_ref) * su).reshape(-1)]
    jac_blocks = None
    if sens is not None:
        n = 4 * N
        jac_blocks = [(sq[None, :, None] * sens[1:N]).reshape(-1, n),
                      sn[:, None] * sens[N],
                      np.diag(np.tile(su, N))]

    sw = np.sqrt(cfg.soft_weight)
    hi_mask = np.isfinite(cfg.q_soft_max)
    lo_mask = np.isfinite(cfg.q_soft_min)
    n_active = 0
    for k in range(1, N + 1):
        over = hi_mask & (states[k] > cfg.q_soft_max)
        under = lo_mask & (states[k] < cfg.q_soft_min)
        for idx in np.flatnonzero(over):
            blocks.append(np.array([sw * (states[k, idx] - cfg.q_soft_max[idx])]))
            if sens is not None:
                jac_blocks.append(sw * sens[k, idx:idx + 1])
            n_active += 1
        for idx in np.flatnonzero(under):
            blocks.append(np.array([sw * (cfg.q_soft_min[idx] - states[k, idx])]))
            if sens is not None:
                jac_blocks.append(-sw * sens[k, idx:idx + 1])
            n_active += 1

    r = np.concatenate(blocks)
    J = np.vstack(jac_blocks) if sens is not None else None
    return r, J, n_active


def shift_warm_start(controls: np.ndarray) -> np.ndarray:
    """Drop the applied first control and repeat the last one."""
    controls = np.asarray(controls, dtype=float)
    return np.vstack([controls[1:], controls[-1:]])


def solve_tracking(q_hat: VesselState | np.ndarray, refs: ReferenceWindow,
                   warm: np.ndarray | None, cfg: NmpcConfig) -> NmpcSolution:
    """One receding-horizon solve; returns the first optimized control.

    On solver failure the previous (shifted) plan is clipped to the
    force bounds and returned with the degraded flag set instead of
    raising, so a closed loop never stalls on a bad cycle.
    """
    q0 = q_hat.as_array() if isinstance(q_hat, VesselState) else np.asarray(q_hat, dtype=float)
    if refs.q_ref.shape[0] != cfg.n_steps + 1:
        raise ValueError("reference window does not match the horizon")
    N = cfg.n_steps
    if warm is None:
        warm = np.zeros((N, 4))
    warm = np.clip(warm, cfg.u_min, cfg.u_max)

    lb = np.tile(cfg.u_min, N)
    ub = np.tile(cfg.u_max, N)

    def fun(x):
        states = _rollout(q0, x.reshape(N, 4), cfg)
        r, _, _ = _stack_residuals(states, x.reshape(N, 4), refs, cfg)
        return r

    def fun_jac(x):
        states, sens = _rollout_with_sens(q0, x.reshape(N, 4), cfg)
        r, J, _ = _stack_residuals(states, x.reshape(N, 4), refs, cfg, sens)
        return r, J

    try:
        problem = NlsProblem(fun=fun, fun_jac=fun_jac, x0=warm.reshape(-1), lb=lb, ub=ub)
        report = solve_bounded_nls(problem, NlsOptions(max_iter=cfg.sqp_iters,
                                                       kkt_tol=cfg.kkt_tol))
        if not (np.all(np.isfinite(report.x)) and np.isfinite(report.cost)):
            raise FloatingPointError("non-finite NMPC solution")
    except Exception:
        u0 = np.clip(warm[0], cfg.u_min, cfg.u_max)
        return NmpcSolution(control=ControlInput.from_array(u0), controls=warm,
                            states=np.tile(q0, (N + 1, 1)), cost=np.nan,
                            report=None, degraded=True)

    U = report.x.reshape(N, 4)
    states = _rollout(q0, U, cfg)
    _, _, n_active = _stack_residuals(states, U, refs, cfg)
    return NmpcSolution(control=ControlInput.from_array(U[0]), controls=U,
                        states=states, cost=report.cost, report=report,
                        soft_active=n_active)


class NmpcController:
    """Stateful wrapper owning the warm-start memory; one per vessel."""

    def __init__(self, cfg: NmpcConfig):
        self.cfg = cfg
        self._warm: np.ndarray | None = None

    def reset(self):
        self._warm = None

    def control(self, q_hat, refs: ReferenceWindow) -> NmpcSolution:
        sol = solve_tracking(q_hat, refs, self._warm, self.cfg)
        self._warm = shift_warm_start(sol.controls)
        return sol
