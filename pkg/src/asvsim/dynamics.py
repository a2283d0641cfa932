"""3-DOF planar vessel model: rigid-body dynamics, thruster allocation,
RK4 integration, and the sensor model.

State convention used throughout the package:

    q = [x, y, psi, u, v, r]

with (x, y, psi) the inertial pose and (u, v, r) the body-frame surge,
sway, and yaw-rate velocities.  The four thrusters are ordered
(f1, f2, f3, f4) = (left, right, anterior, rear); f1/f2 act in surge and
f3/f4 in sway, with moment arms a/2 and b/2 respectively.

The velocity dynamics are

    M vdot = B f + tau_env - (C(v) + D) v

with diagonal added-mass matrix M = diag(m11, m22, m33), skew Coriolis
matrix C(v), and linear diagonal drag D = diag(Xu, Yv, Nr).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import wrap_angle

__all__ = [
    "Pose",
    "BodyVelocity",
    "VesselState",
    "ControlInput",
    "GeneralizedForce",
    "HydroParams",
    "ThrusterGeometry",
    "Disturbance",
    "NoiseSpec",
    "allocate",
    "allocation_matrix",
    "body_to_inertial",
    "derivative",
    "step_rk4",
    "measure",
    "derivative_array",
    "derivative_jacobians",
    "step_rk4_array",
    "step_rk4_with_jacobians",
    "measure_array",
    "MEASUREMENT_DIM",
]

MEASUREMENT_DIM = 8

# Sanity envelope for simulated trajectories; exceeding it means the
# closed loop has blown up, not that the model is wrong.
VEL_SANITY = np.array([5.0, 5.0, 3.0])


@dataclass(frozen=True)
class Pose:
    """Inertial position and heading. Heading is kept in (-pi, pi]."""

    x: float
    y: float
    psi: float

    def __post_init__(self):
        object.__setattr__(self, "psi", wrap_angle(self.psi))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi])


@dataclass(frozen=True)
class BodyVelocity:
    """Body-frame surge, sway, and yaw-rate velocities."""

    u: float
    v: float
    r: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.u, self.v, self.r])):
            raise ValueError("velocity components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v, self.r])


@dataclass(frozen=True)
class VesselState:
    pose: Pose
    vel: BodyVelocity

    @staticmethod
    def from_array(q) -> "VesselState":
        q = np.asarray(q, dtype=float)
        return VesselState(Pose(q[0], q[1], q[2]), BodyVelocity(q[3], q[4], q[5]))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.pose.as_array(), self.vel.as_array()])

    # flat accessors; the nested layout is for construction only
    @property
    def x(self):
        return self.pose.x

    @property
    def y(self):
        return self.pose.y

    @property
    def psi(self):
        return self.pose.psi

    @property
    def u(self):
        return self.vel.u

    @property
    def v(self):
        return self.vel.v

    @property
    def r(self):
        return self.vel.r


@dataclass(frozen=True)
class ControlInput:
    """Commanded thruster forces in newtons."""

    f1: float
    f2: float
    f3: float
    f4: float

    @staticmethod
    def from_array(f) -> "ControlInput":
        f = np.asarray(f, dtype=float)
        return ControlInput(f[0], f[1], f[2], f[3])

    def as_array(self) -> np.ndarray:
        return np.array([self.f1, self.f2, self.f3, self.f4])


@dataclass(frozen=True)
class GeneralizedForce:
    """Body-frame surge/sway forces [N] and yaw moment [N m]."""

    tau_u: float
    tau_v: float
    tau_r: float

    def as_array(self) -> np.ndarray:
        return np.array([self.tau_u, self.tau_v, self.tau_r])


ZERO_FORCE = GeneralizedForce(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class HydroParams:
    """Identifiable hydrodynamic parameters.

    m11, m22 [kg] and m33 [kg m^2] are the diagonal added-mass/inertia
    entries; Xu, Yv [kg/s] and Nr [kg m^2/s] are the linear drag
    coefficients.  All six must be strictly positive.
    """

    m11: float
    m22: float
    m33: float
    Xu: float
    Yv: float
    Nr: float

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0.0):
            raise ValueError(f"hydrodynamic parameters must be positive, got {vals}")

    @staticmethod
    def from_array(xi) -> "HydroParams":
        xi = np.asarray(xi, dtype=float)
        return HydroParams(*xi)

    def as_array(self) -> np.ndarray:
        return np.array([self.m11, self.m22, self.m33, self.Xu, self.Yv, self.Nr])


# Reference desk-scale parameter set used as the simulation ground truth.
DEFAULT_PARAMS = HydroParams(m11=172.0, m22=188.0, m33=24.0, Xu=38.0, Yv=168.0, Nr=16.0)


@dataclass(frozen=True)
class ThrusterGeometry:
    """Moment arms: a is the lateral separation of the surge pair,
    b the longitudinal separation of the sway pair. Both in meters."""

    a: float = 0.8
    b: float = 1.6

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("thruster separations must be positive")


DEFAULT_GEOMETRY = ThrusterGeometry()


@dataclass(frozen=True)
class Disturbance:
    """Environmental force/torque acting on the hull, in the body frame."""

    tau_env: GeneralizedForce = ZERO_FORCE


@dataclass(frozen=True)
class NoiseSpec:
    """Per-channel measurement noise standard deviations."""

    sigma_pos: float = 0.02
    sigma_psi: float = 0.02
    sigma_r: float = 0.01
    sigma_f: float = 1.0

    def as_array(self) -> np.ndarray:
        s = self
        return np.array([s.sigma_pos, s.sigma_pos, s.sigma_psi, s.sigma_r,
                         s.sigma_f, s.sigma_f, s.sigma_f, s.sigma_f])


ZERO_NOISE = NoiseSpec(0.0, 0.0, 0.0, 0.0)


def allocation_matrix(geom: ThrusterGeometry) -> np.ndarray:
    """3x4 map from thruster forces to generalized body force."""
    a2, b2 = 0.5 * geom.a, 0.5 * geom.b
    return np.array([
        [1.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 1.0],
        [a2, -a2, b2, -b2],
    ])


def allocate(u: ControlInput, geom: ThrusterGeometry) -> GeneralizedForce:
    """Map the four thruster forces to (tau_u, tau_v, tau_r)."""
    tau = allocation_matrix(geom) @ u.as_array()
    return GeneralizedForce(tau[0], tau[1], tau[2])


def body_to_inertial(pose: Pose) -> np.ndarray:
    """3x3 rotation taking body-frame velocities to inertial rates."""
    c, s = np.cos(pose.psi), np.sin(pose.psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _check_params(m11, m22, m33):
    if m11 <= 0 or m22 <= 0 or m33 <= 0:
        raise ValueError("mass matrix entries must be positive")


def derivative_array(q, f, xi, geom: ThrusterGeometry, tau_env=None) -> np.ndarray:
    """Continuous-time state derivative qdot for flat array inputs.

    q is the 6-state, f the 4 thruster forces, xi the 6 hydro parameters
    (m11, m22, m33, Xu, Yv, Nr).  tau_env is an optional body-frame
    (force, force, moment) triple.
    """
    m11, m22, m33, Xu, Yv, Nr = xi
    _check_params(m11, m22, m33)
    psi, u, v, r = q[2], q[3], q[4], q[5]
    a2, b2 = 0.5 * geom.a, 0.5 * geom.b

    tau_u = f[0] + f[1]
    tau_v = f[2] + f[3]
    tau_r = a2 * (f[0] - f[1]) + b2 * (f[2] - f[3])
    if tau_env is not None:
        tau_u += tau_env[0]
        tau_v += tau_env[1]
        tau_r += tau_env[2]

    c, s = np.cos(psi), np.sin(psi)
    return np.array([
        c * u - s * v,
        s * u + c * v,
        r,
        (tau_u + m22 * v * r - Xu * u) / m11,
        (tau_v - m11 * u * r - Yv * v) / m22,
        (tau_r - (m22 - m11) * u * v - Nr * r) / m33,
    ])


def derivative(q: VesselState, u: ControlInput, xi: HydroParams,
               geom: ThrusterGeometry, dist: Disturbance = Disturbance()) -> np.ndarray:
    """State derivative for the typed API; returns the flat 6-vector qdot."""
    return derivative_array(q.as_array(), u.as_array(), xi.as_array(), geom,
                            dist.tau_env.as_array())


def derivative_jacobians(q, f, xi, geom: ThrusterGeometry):
    """Analytic Jacobians (d qdot / d q, d qdot / d f) at a flat state.

    Returns (fq, fu) with shapes (6, 6) and (6, 4).  tau_env is additive
    and state-independent so it does not appear.
    """
    m11, m22, m33, Xu, Yv, Nr = xi
    psi, u, v, r = q[2], q[3], q[4], q[5]
    c, s = np.cos(psi), np.sin(psi)

    fq = np.zeros((6, 6))
    fq[0, 2] = -s * u - c * v
    fq[0, 3] = c
    fq[0, 4] = -s
    fq[1, 2] = c * u - s * v
    fq[1, 3] = s
    fq[1, 4] = c
    fq[2, 5] = 1.0
    fq[3, 3] = -Xu / m11
    fq[3, 4] = m22 * r / m11
    fq[3, 5] = m22 * v / m11
    fq[4, 3] = -m11 * r / m22
    fq[4, 4] = -Yv / m22
    fq[4, 5] = -m11 * u / m22
    fq[5, 3] = -(m22 - m11) * v / m33
    fq[5, 4] = -(m22 - m11) * u / m33
    fq[5, 5] = -Nr / m33

    a2, b2 = 0.5 * geom.a, 0.5 * geom.b
    fu = np.zeros((6, 4))
    fu[3, 0] = 1.0 / m11
    fu[3, 1] = 1.0 / m11
    fu[4, 2] = 1.0 / m22
    fu[4, 3] = 1.0 / m22
    fu[5] = [a2 / m33, -a2 / m33, b2 / m33, -b2 / m33]
    return fq, fu


def _check_dt(dt):
    if not (0.0 < dt <= 0.5):
        raise ValueError(f"dt must lie in (0, 0.5] s, got {dt}")


def step_rk4_array(q, f, dt, xi, geom: ThrusterGeometry, tau_env=None) -> np.ndarray:
    """One classical RK4 step with zero-order-hold control; wraps heading."""
    _check_dt(dt)
    k1 = derivative_array(q, f, xi, geom, tau_env)
    k2 = derivative_array(q + 0.5 * dt * k1, f, xi, geom, tau_env)
    k3 = derivative_array(q + 0.5 * dt * k2, f, xi, geom, tau_env)
    k4 = derivative_array(q + dt * k3, f, xi, geom, tau_env)
    out = q + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[2] = wrap_angle(out[2])
    return out


def step_rk4(q: VesselState, u: ControlInput, dt: float, xi: HydroParams,
             geom: ThrusterGeometry, dist: Disturbance = Disturbance()) -> VesselState:
    out = step_rk4_array(q.as_array(), u.as_array(), dt, xi.as_array(), geom,
                         dist.tau_env.as_array())
    return VesselState.from_array(out)


def step_rk4_with_jacobians(q, f, dt, xi, geom: ThrusterGeometry, tau_env=None):
    """RK4 step plus the exact discrete Jacobians A = dq'/dq, B = dq'/df.

    The Jacobians chain the analytic stage Jacobians, so they are the
    true derivatives of the numerical map (not a continuous-time
    approximation).  Used by the receding-horizon solvers.
    """
    _check_dt(dt)
    eye = np.eye(6)
    h2 = 0.5 * dt

    q1 = q
    k1 = derivative_array(q1, f, xi, geom, tau_env)
    j1q, j1u = derivative_jacobians(q1, f, xi, geom)

    q2 = q + h2 * k1
    k2 = derivative_array(q2, f, xi, geom, tau_env)
    j2q_loc, j2u_loc = derivative_jacobians(q2, f, xi, geom)
    j2q = j2q_loc @ (eye + h2 * j1q)
    j2u = j2q_loc @ (h2 * j1u) + j2u_loc

    q3 = q + h2 * k2
    k3 = derivative_array(q3, f, xi, geom, tau_env)
    j3q_loc, j3u_loc = derivative_jacobians(q3, f, xi, geom)
    j3q = j3q_loc @ (eye + h2 * j2q)
    j3u = j3q_loc @ (h2 * j2u) + j3u_loc

    q4 = q + dt * k3
    k4 = derivative_array(q4, f, xi, geom, tau_env)
    j4q_loc, j4u_loc = derivative_jacobians(q4, f, xi, geom)
    j4q = j4q_loc @ (eye + dt * j3q)
    j4u = j4q_loc @ (dt * j3u) + j4u_loc

    out = q + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[2] = wrap_angle(out[2])
    A = eye + (dt / 6.0) * (j1q + 2.0 * j2q + 2.0 * j3q + j4q)
    B = (dt / 6.0) * (j1u + 2.0 * j2u + 2.0 * j3u + j4u)
    return out, A, B


def measure_array(q, f, noise: NoiseSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Sensor model: z = [x, y, psi, r, f1..f4] plus Gaussian channel noise."""
    z = np.array([q[0], q[1], q[2], q[5], f[0], f[1], f[2], f[3]])
    sig = noise.as_array()
    if rng is not None and np.any(sig > 0.0):
        z = z + sig * rng.standard_normal(MEASUREMENT_DIM)
    z[2] = wrap_angle(z[2])
    return z


def measure(q: VesselState, u: ControlInput, noise: NoiseSpec,
            rng: np.random.Generator | None = None) -> np.ndarray:
    return measure_array(q.as_array(), u.as_array(), noise, rng)
