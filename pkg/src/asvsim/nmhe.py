"""Moving-horizon state estimation over a sliding measurement window.

The decision variable is the state at the window start (single
shooting); the model acts as a hard constraint, so the estimate is the
model rollout that best explains the buffered measurements, anchored to
the previous estimate through the arrival cost.  Velocities are not
measured and are recovered through the dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    MEASUREMENT_DIM,
    HydroParams,
    ThrusterGeometry,
    VesselState,
    step_rk4_array,
    step_rk4_with_jacobians,
)
from .geometry import wrap_angle
from .solvers import NlsOptions, NlsProblem, SolveReport, solve_bounded_nls

# measurement selector: z = [x, y, psi, r, f1..f4], state part only
_HQ = np.zeros((MEASUREMENT_DIM, 6))
_HQ[0, 0] = _HQ[1, 1] = _HQ[2, 2] = 1.0
_HQ[3, 5] = 1.0


@dataclass
class MheConfig:
    params: HydroParams
    geom: ThrusterGeometry
    window: int = 20
    dt: float = 0.1
    # inverses of the assumed noise variances
    p_arrival: np.ndarray = field(default_factory=lambda: 1.0 / np.array([1.0, 1.0, 1.0, 0.1, 0.1, 1.0]))
    r_meas: np.ndarray = field(default_factory=lambda: 1.0 / np.array([0.0005, 0.0005, 0.0005, 0.0001, 1.0, 1.0, 1.0, 1.0]))
    q_min: np.ndarray = field(default_factory=lambda: np.array([-np.inf, -np.inf, -np.inf, -5.0, -5.0, -3.0]))
    q_max: np.ndarray = field(default_factory=lambda: np.array([np.inf, np.inf, np.inf, 5.0, 5.0, 3.0]))
    soft_weight: float = 1e4
    sqp_iters: int = 10
    kkt_tol: float = 1e-6

    def __post_init__(self):
        for name in ("p_arrival", "r_meas", "q_min", "q_max"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.window < 2:
            raise ValueError("window must hold at least 2 samples")
        if np.any(self.p_arrival < 0) or np.any(self.r_meas <= 0):
            raise ValueError("weights must be positive")

    @property
    def window_seconds(self) -> float:
        return self.window * self.dt


def default_config(params: HydroParams, geom: ThrusterGeometry) -> MheConfig:
    """Arrival/measurement weights used in the experiments and a 2 s window."""
    return MheConfig(params=params, geom=geom)


class MeasurementBuffer:
    """Ring of (timestamp, measurement, applied control) with capacity M.

    The stored control is the one that drove the plant over the interval
    ending at the entry's timestamp, so consecutive entries are linked
    by exactly one model step."""

    def __init__(self, capacity: int, dt: float):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.dt = dt
        self._t: list[float] = []
        self._z: list[np.ndarray] = []
        self._u: list[np.ndarray] = []

    def __len__(self):
        return len(self._t)

    @property
    def full(self) -> bool:
        return len(self._t) == self.capacity

    def push(self, z, u, t: float) -> None:
        if self._t:
            gap = t - self._t[-1]
            if gap <= 0:
                raise ValueError(f"timestamps must increase (last {self._t[-1]}, got {t})")
            if abs(gap - self.dt) > 0.1 * self.dt:
                raise ValueError(f"sample spacing {gap:.4f} departs from dt={self.dt}")
        self._t.append(float(t))
        self._z.append(np.asarray(z, dtype=float).copy())
        self._u.append(np.asarray(u, dtype=float).copy())
        if len(self._t) > self.capacity:
            self._t.pop(0)
            self._z.pop(0)
            self._u.pop(0)

    def snapshot(self):
        """Copy-on-read view: (t, Z, U) arrays aligned by entry."""
        return (np.array(self._t), np.array(self._z), np.array(self._u))


@dataclass
class EstimateReport:
    q_hat: VesselState          # estimate at the newest sample
    window: np.ndarray          # (K, 6) smoothed trajectory
    prior_next: np.ndarray      # arrival-cost anchor for the next cycle
    cost: float
    report: SolveReport | None
    degraded: bool = False


def _window_rollout(x0, U, cfg: MheConfig, with_sens):
    """States over the window and, optionally, their sensitivity to x0."""
    K = U.shape[0]
    xi = cfg.params.as_array()
    states = np.empty((K, 6))
    states[0] = x0
    q = x0
    if not with_sens:
        for k in range(1, K):
            q = step_rk4_array(q, U[k], cfg.dt, xi, cfg.geom)
            states[k] = q
        return states, None
    sens = np.empty((K, 6, 6))
    S = np.eye(6)
    sens[0] = S
    for k in range(1, K):
        q, A, _ = step_rk4_with_jacobians(q, U[k], cfg.dt, xi, cfg.geom)
        S = A @ S
        states[k] = q
        sens[k] = S
    return states, sens


def _residuals(states, Z, U, prior, cfg: MheConfig, sens=None):
    K = states.shape[0]
    sp = np.sqrt(cfg.p_arrival)
    sr = np.sqrt(cfg.r_meas)

    d0 = states[0] - prior
    d0[2] = wrap_angle(d0[2])
    blocks = [sp * d0]
    jac = [np.diag(sp) @ sens[0]] if sens is not None else None

    innov = Z - states @ _HQ.T
    innov[:, 4:] = Z[:, 4:] - U  # force channels echo the applied control
    innov[:, 2] = wrap_angle(innov[:, 2])
    blocks.append((innov * sr).reshape(-1))
    if sens is not None:
        Jm = -(sr[None, :, None] * (_HQ @ sens))  # (K, 8, 6)
        jac.append(Jm.reshape(-1, 6))

    sw = np.sqrt(cfg.soft_weight)
    for k in range(1, K):
        over = np.isfinite(cfg.q_max) & (states[k] > cfg.q_max)
        under = np.isfinite(cfg.q_min) & (states[k] < cfg.q_min)
        for idx in np.flatnonzero(over):
            blocks.append(np.array([sw * (states[k, idx] - cfg.q_max[idx])]))
            if sens is not None:
                jac.append(sw * sens[k, idx:idx + 1])
        for idx in np.flatnonzero(under):
            blocks.append(np.array([sw * (cfg.q_min[idx] - states[k, idx])]))
            if sens is not None:
                jac.append(-sw * sens[k, idx:idx + 1])

    r = np.concatenate(blocks)
    J = np.vstack(jac) if sens is not None else None
    return r, J


def estimate(buffer: MeasurementBuffer, prior, cfg: MheConfig) -> EstimateReport:
    """Solve the windowed estimation problem over the buffered samples.

    The prior anchors the window-initial state; headings are compared on
    the wrapped difference everywhere.  Works on partial windows during
    bootstrap.  Raises only on empty buffers; solver trouble degrades to
    the best available iterate.
    """
    if len(buffer) == 0:
        raise ValueError("cannot estimate from an empty buffer")
    _, Z, U = buffer.snapshot()
    prior = np.asarray(prior, dtype=float).copy()
    prior[2] = wrap_angle(prior[2])

    def fun(x):
        states, _ = _window_rollout(x, U, cfg, False)
        r, _ = _residuals(states, Z, U, prior, cfg)
        return r

    def fun_jac(x):
        states, sens = _window_rollout(x, U, cfg, True)
        return _residuals(states, Z, U, prior, cfg, sens)

    x0 = np.clip(prior, cfg.q_min, cfg.q_max)
    problem = NlsProblem(fun=fun, fun_jac=fun_jac, x0=x0, lb=cfg.q_min, ub=cfg.q_max)
    report = solve_bounded_nls(problem, NlsOptions(max_iter=cfg.sqp_iters,
                                                   kkt_tol=cfg.kkt_tol))
    window, _ = _window_rollout(report.x, U, cfg, False)
    window[:, 2] = wrap_angle(window[:, 2])
    # downstream states are only softly penalized; the reported estimate
    # must honor the box exactly
    window = np.clip(window, cfg.q_min, cfg.q_max)
    q_hat = VesselState.from_array(window[-1])
    prior_next = window[1].copy() if (buffer.full and len(buffer) > 1) else window[0].copy()
    return EstimateReport(q_hat=q_hat, window=window, prior_next=prior_next,
                          cost=report.cost, report=report)


class MheEstimator:
    """Stateful estimator: owns the buffer, the rolling prior, and a
    dead-reckoning fallback for cycles where the solve goes bad."""

    def __init__(self, cfg: MheConfig):
        self.cfg = cfg
        self.buffer = MeasurementBuffer(cfg.window, cfg.dt)
        self._prior: np.ndarray | None = None
        self._last: np.ndarray | None = None

    def _dead_reckon(self, u_prev) -> np.ndarray:
        prev = self._last if self._last is not None else self._prior
        if prev is None:
            return np.zeros(6)
        u = np.asarray(u_prev, dtype=float)
        if not np.all(np.isfinite(u)):
            u = np.zeros(4)
        return step_rk4_array(prev, u, self.cfg.dt,
                              self.cfg.params.as_array(), self.cfg.geom)

    def update(self, z, u_prev, t: float) -> EstimateReport:
        z = np.asarray(z, dtype=float)
        if not np.all(np.isfinite(z)):
            # sensor glitch: substitute the model's own prediction so the
            # buffer timing chain stays intact, and flag the cycle
            dead = self._dead_reckon(u_prev)
            pseudo = np.array([dead[0], dead[1], dead[2], dead[5], *np.zeros(4)])
            self.buffer.push(pseudo, u_prev, t)
            self._last = dead
            if self._prior is None:
                self._prior = dead.copy()
            return EstimateReport(q_hat=VesselState.from_array(dead),
                                  window=dead[None], prior_next=self._prior.copy(),
                                  cost=np.nan, report=None, degraded=True)
        self.buffer.push(z, u_prev, t)
        if self._prior is None:
            # bootstrap: measured pose, zero velocity
            self._prior = np.array([z[0], z[1], z[2], 0.0, 0.0, 0.0])
        try:
            rep = estimate(self.buffer, self._prior, self.cfg)
            if not np.all(np.isfinite(rep.window)):
                raise FloatingPointError("non-finite estimate")
        except (ValueError, FloatingPointError):
            dead = self._dead_reckon(u_prev)
            self._last = dead
            return EstimateReport(q_hat=VesselState.from_array(dead),
                                  window=dead[None], prior_next=self._prior.copy(),
                                  cost=np.nan, report=None, degraded=True)
        self._prior = rep.prior_next.copy()
        self._last = rep.window[-1].copy()
        return rep
