"""
Rigid-body quadrotor plant.

Body frame z points up along the nominal thrust axis; world frame z points
up against gravity. Euler angles are (roll, pitch, yaw) with
R = Rz(psi)·Ry(theta)·Rx(phi).
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.spatial.transform import Rotation

from config import GRAVITY, MAX_DT
from utils.errors import DomainError

logger = logging.getLogger(__name__)

NEAR_HOVER_LIMIT = math.pi / 4
DEFAULT_ENVELOPE = (0.35, 0.35, 0.25)


class RotorConfig(BaseModel):
    """One rotor: body-frame position [m], unit thrust direction, drag rate σ [m]"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    position: List[float] = Field(min_length=3, max_length=3)
    direction: List[float] = Field(default_factory=lambda: [0.0, 0.0, 1.0], min_length=3, max_length=3)
    drag_rate: float

    @field_validator('direction')
    @classmethod
    def _unit_direction(cls, value: List[float]) -> List[float]:
        norm = math.sqrt(sum(v * v for v in value))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"thrust direction must be a unit vector (norm {norm:.6g})")
        return value


class FlightParams(BaseModel):
    """Mass properties, rotor layout and thrust limits of the airframe"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    mass: float = Field(gt=0)
    inertia: List[List[float]]
    rotors: List[RotorConfig] = Field(min_length=4, max_length=4)
    lambda_min: float = Field(default=0.0, ge=0)
    lambda_max: float = Field(default=8.0, gt=0)
    gravity: float = Field(default=GRAVITY, gt=0)

    @model_validator(mode='after')
    def _check_inertia(self) -> 'FlightParams':
        inertia = np.asarray(self.inertia, dtype=float)
        if inertia.shape != (3, 3):
            raise ValueError('inertia must be a 3x3 matrix')
        if not np.allclose(inertia, inertia.T):
            raise ValueError('inertia must be symmetric')
        if np.any(np.linalg.eigvalsh(inertia) <= 0):
            raise ValueError('inertia must be positive definite')
        if self.lambda_min >= self.lambda_max:
            raise ValueError('lambda_min must be below lambda_max')
        return self

    @property
    def inertia_matrix(self) -> np.ndarray:
        return np.asarray(self.inertia, dtype=float)


@dataclass
class RigidBodyState:
    r: np.ndarray = field(default_factory=lambda: np.zeros(3))
    euler: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def near_hover(self) -> bool:
        return abs(self.euler[0]) < NEAR_HOVER_LIMIT and abs(self.euler[1]) < NEAR_HOVER_LIMIT

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.euler, self.v, self.omega])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> 'RigidBodyState':
        return cls(r=x[0:3].copy(), euler=x[3:6].copy(), v=x[6:9].copy(), omega=x[9:12].copy())

    @classmethod
    def at(cls, position: Sequence[float], euler: Sequence[float] = (0.0, 0.0, 0.0)) -> 'RigidBodyState':
        return cls(r=np.asarray(position, dtype=float), euler=np.asarray(euler, dtype=float))


def rotation_matrix(euler: Sequence[float]) -> np.ndarray:
    """Body-to-world rotation for (roll, pitch, yaw)"""
    return Rotation.from_euler('xyz', euler).as_matrix()


def yaw_matrix(psi: float) -> np.ndarray:
    return Rotation.from_euler('z', psi).as_matrix()


def wrap_angle(angle):
    """Map angles into (-pi, pi]"""
    wrapped = np.mod(np.asarray(angle) + math.pi, 2 * math.pi) - math.pi
    return np.where(wrapped == -math.pi, math.pi, wrapped)


def box_inertia(mass: float, dims: Sequence[float] = DEFAULT_ENVELOPE) -> List[List[float]]:
    """Inertia of a uniform box with edge lengths (a, b, c) [m]"""
    a, b, c = dims
    return [
        [mass * (b ** 2 + c ** 2) / 12.0, 0.0, 0.0],
        [0.0, mass * (a ** 2 + c ** 2) / 12.0, 0.0],
        [0.0, 0.0, mass * (a ** 2 + b ** 2) / 12.0],
    ]


def allocation_matrix(rotors: Sequence[RotorConfig]) -> np.ndarray:
    """6x4 map from rotor thrusts to body force (top) and torque (bottom)"""
    if len(rotors) != 4:
        raise DomainError(f"Expected 4 rotors, got {len(rotors)}")
    q = np.zeros((6, 4))
    for i, rotor in enumerate(rotors):
        u = np.asarray(rotor.direction, dtype=float)
        p = np.asarray(rotor.position, dtype=float)
        q[0:3, i] = u
        q[3:6, i] = np.cross(p, u) + rotor.drag_rate * u
    return q


def tilt_rotor(rotor: RotorConfig, angle: float) -> RotorConfig:
    """Rotor whose thrust axis leans toward the body centre by angle [rad], as a drooped arm does"""
    p = np.asarray(rotor.position, dtype=float)
    u = np.asarray(rotor.direction, dtype=float)
    inward = -p.copy()
    inward -= np.dot(inward, u) * u
    norm = np.linalg.norm(inward)
    if norm == 0.0:
        raise DomainError('Cannot tilt a rotor located on its own thrust axis')
    axis = np.cross(u, inward / norm)
    tilted = Rotation.from_rotvec(angle * axis).apply(u)
    tilted /= np.linalg.norm(tilted)
    return rotor.model_copy(update={'direction': tilted.tolist()})


def _derivative(x: np.ndarray, wrench: np.ndarray, params: FlightParams, inertia: np.ndarray,
                inertia_inv: np.ndarray, external_force: np.ndarray, external_torque: np.ndarray) -> np.ndarray:
    euler = x[3:6]
    v = x[6:9]
    omega = x[9:12]
    rotation = rotation_matrix(euler)
    accel = rotation @ wrench[0:3] / params.mass + external_force / params.mass
    accel[2] -= params.gravity
    # near hover the Euler rates are identified with the body rates
    euler_rate = omega
    torque = wrench[3:6] + external_torque
    omega_rate = inertia_inv @ (torque - np.cross(omega, inertia @ omega))
    return np.concatenate([v, euler_rate, accel, omega_rate])


def dynamics_step(
    state: RigidBodyState,
    thrusts: Sequence[float],
    params: FlightParams,
    dt: float,
    allocation: Optional[np.ndarray] = None,
    external_force: Optional[Sequence[float]] = None,
    external_torque: Optional[Sequence[float]] = None,
) -> RigidBodyState:
    """
    Advance the rigid body by one fixed RK4 step.

    Args:
        state: Current pose and twist
        thrusts: Per-rotor thrust [N], non-negative
        params: Airframe parameters
        dt: Step size in (0, 0.01] s
        allocation: Plant allocation matrix; defaults to the one built from params.rotors
        external_force: World-frame disturbance force [N]
        external_torque: Body-frame disturbance torque [N·m]
    """
    if not 0.0 < dt <= MAX_DT:
        raise DomainError(f"dt must lie in (0, {MAX_DT}], got {dt}")
    lam = np.asarray(thrusts, dtype=float)
    if lam.shape != (4,) or np.any(lam < 0.0):
        raise DomainError(f"Thrusts must be 4 non-negative values, got {lam.tolist()}")

    q = allocation_matrix(params.rotors) if allocation is None else allocation
    wrench = q @ lam
    inertia = params.inertia_matrix
    inertia_inv = np.linalg.inv(inertia)
    f_ext = np.zeros(3) if external_force is None else np.asarray(external_force, dtype=float)
    t_ext = np.zeros(3) if external_torque is None else np.asarray(external_torque, dtype=float)

    x = state.to_vector()
    args = (wrench, params, inertia, inertia_inv, f_ext, t_ext)
    k1 = _derivative(x, *args)
    k2 = _derivative(x + 0.5 * dt * k1, *args)
    k3 = _derivative(x + 0.5 * dt * k2, *args)
    k4 = _derivative(x + dt * k3, *args)
    x_next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    result = RigidBodyState.from_vector(x_next)
    result.euler = wrap_angle(result.euler)
    if state.near_hover and not result.near_hover:
        logger.warning(
            f"Attitude left the near-hover region: roll={result.euler[0]:.3f}, pitch={result.euler[1]:.3f} rad"
        )
    return result


def mechanical_energy(state: RigidBodyState, params: FlightParams) -> float:
    """Kinetic plus potential energy [J]"""
    inertia = params.inertia_matrix
    kinetic = 0.5 * params.mass * float(state.v @ state.v) + 0.5 * float(state.omega @ inertia @ state.omega)
    return kinetic + params.mass * params.gravity * float(state.r[2])


def settle_on_support(state: RigidBodyState, support_height: Optional[float]) -> RigidBodyState:
    """Stop a descending body on a horizontal support at support_height [m]"""
    if support_height is None or state.r[2] > support_height:
        return state
    if state.v[2] > 0.0:
        return state
    r = state.r.copy()
    r[2] = support_height
    return replace(state, r=r, v=np.zeros(3), omega=np.zeros(3))
