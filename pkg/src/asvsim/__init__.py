"""Desk-scale autonomy stack for a holonomic canal vessel.

Subsystems: 3-DOF vessel dynamics, dense bounded least-squares solvers,
grey-box hydrodynamic identification, receding-horizon tracking control
(NMPC), moving-horizon state estimation (NMHE), grid path planning, an
SE(2) pose-graph localization back-end, and a closed-loop mission
simulator with a CLI front-end.
"""

from .dynamics import (
    BodyVelocity,
    ControlInput,
    Disturbance,
    GeneralizedForce,
    HydroParams,
    NoiseSpec,
    Pose,
    ThrusterGeometry,
    VesselState,
    DEFAULT_GEOMETRY,
    DEFAULT_PARAMS,
)

__version__ = "0.1.0"

__all__ = [
    "BodyVelocity",
    "ControlInput",
    "Disturbance",
    "GeneralizedForce",
    "HydroParams",
    "NoiseSpec",
    "Pose",
    "ThrusterGeometry",
    "VesselState",
    "DEFAULT_GEOMETRY",
    "DEFAULT_PARAMS",
    "__version__",
]
