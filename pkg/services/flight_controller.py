"""
Attitude LQI and position PID for the rigid-arm airframe.

Attitude error state ordering: [phi, wx, theta, wy, psi, wz, v_phi, v_theta, v_psi]
where v_* are the integrals of the angle errors.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import linalg

from services.flight_dynamics import (
    FlightParams, RigidBodyState, allocation_matrix, rotation_matrix, wrap_angle, yaw_matrix,
)
from utils.errors import InfeasibleAttitudeError, SynthesisError

logger = logging.getLogger(__name__)

RICCATI_TOL = 1e-8
MAX_NEWTON_ITERATIONS = 50


class ControllerGains(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    M_weights: List[float] = Field(default_factory=lambda: [40.0, 4.0, 40.0, 4.0, 10.0, 2.0, 10.0, 10.0, 2.0],
                                   min_length=9, max_length=9)
    N_weights: List[float] = Field(default_factory=lambda: [1.0, 1.0, 1.0, 1.0], min_length=4, max_length=4)
    Kp_r: List[float] = Field(default_factory=lambda: [4.0, 4.0, 6.0], min_length=3, max_length=3)
    Ki_r: List[float] = Field(default_factory=lambda: [0.5, 0.5, 1.0], min_length=3, max_length=3)
    Kd_r: List[float] = Field(default_factory=lambda: [3.0, 3.0, 4.0], min_length=3, max_length=3)

    @field_validator('M_weights', 'N_weights', 'Kp_r', 'Ki_r', 'Kd_r')
    @classmethod
    def _positive(cls, value: List[float]) -> List[float]:
        if any(w <= 0 for w in value):
            raise ValueError('all weights and gains must be > 0')
        return value


class RiccatiSolution(NamedTuple):
    P: np.ndarray
    K: np.ndarray
    residual: float
    iterations: int


def _weight_matrix(weights) -> np.ndarray:
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    return w if w.ndim == 2 else np.diag(w)


def riccati_residual(A: np.ndarray, B: np.ndarray, M: np.ndarray, N: np.ndarray, P: np.ndarray) -> float:
    """Frobenius norm of AᵀP + PA − PBN⁻¹BᵀP + M"""
    residual = A.T @ P + P @ A - P @ B @ np.linalg.solve(N, B.T @ P) + M
    return float(np.linalg.norm(residual, 'fro'))


def solve_riccati(A, B, M, N, tol: float = RICCATI_TOL,
                  max_iterations: int = MAX_NEWTON_ITERATIONS) -> RiccatiSolution:
    """
    Continuous-time LQR gain for the cost ∫ xᵀMx + uᵀNu dt.

    A Schur-method solution seeds Newton-Kleinman refinement with Lyapunov
    inner solves; the returned residual is the certificate.

    Raises:
        SynthesisError: no stabilizing solution or residual above tol
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    M = _weight_matrix(M)
    N = _weight_matrix(N)

    try:
        P = linalg.solve_continuous_are(A, B, M, N)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SynthesisError(f"Riccati equation has no stabilizing solution: {e}") from e

    residual = riccati_residual(A, B, M, N, P)
    iterations = 0
    while residual > tol * 1e-2 and iterations < max_iterations:
        K = np.linalg.solve(N, B.T @ P)
        closed = A - B @ K
        candidate = linalg.solve_continuous_lyapunov(closed.T, -(M + K.T @ N @ K))
        candidate = 0.5 * (candidate + candidate.T)
        candidate_residual = riccati_residual(A, B, M, N, candidate)
        iterations += 1
        if candidate_residual >= residual:
            break
        P, residual = candidate, candidate_residual

    if residual > tol:
        raise SynthesisError(f"Riccati residual {residual:.3e} above {tol:.1e}", residual=residual)

    K = np.linalg.solve(N, B.T @ P)
    eigenvalues = np.linalg.eigvals(A - B @ K)
    if np.any(eigenvalues.real >= 0.0):
        raise SynthesisError('Closed loop is not strictly stable', residual=residual)
    logger.debug(f"Riccati solved after {iterations} refinements, residual {residual:.3e}")
    return RiccatiSolution(P, K, residual, iterations)


def build_attitude_model(inertia: np.ndarray, q_rot: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Linearized near-hover attitude model augmented with angle-error integrals"""
    A = np.zeros((9, 9))
    for k in range(3):
        A[2 * k, 2 * k + 1] = 1.0
        A[6 + k, 2 * k] = 1.0
    torque_map = np.linalg.solve(inertia, q_rot)
    B = np.zeros((9, 4))
    for k in range(3):
        B[2 * k + 1, :] = torque_map[k]
    return A, B


def attitude_error_state(state: RigidBodyState, euler_des: Sequence[float], integral: np.ndarray) -> np.ndarray:
    error = wrap_angle(state.euler - np.asarray(euler_des, dtype=float))
    x = np.empty(9)
    x[0:6:2] = error
    x[1:6:2] = state.omega
    x[6:9] = integral
    return x


def lqi_attitude_control(state: RigidBodyState, setpoint: Sequence[float], integral: np.ndarray,
                         K: np.ndarray, inertia: np.ndarray, q_rot: np.ndarray,
                         dt: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rotor thrust corrections for attitude tracking.

    Returns:
        (lambda_rot, new_integral); new_integral advances by the angle error times dt
    """
    x = attitude_error_state(state, setpoint, integral)
    omega = state.omega
    gyroscopic = np.cross(omega, inertia @ omega)
    lambda_rot = -K @ x + np.linalg.pinv(q_rot) @ gyroscopic
    new_integral = np.asarray(integral, dtype=float) + x[0:6:2] * dt
    return lambda_rot, new_integral


def desired_world_force(state: RigidBodyState, r_des: Sequence[float], integral: np.ndarray,
                        gains: ControllerGains, mass: float, gravity: float,
                        v_des: Optional[Sequence[float]] = None, dt: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """PID force request in the world frame and the advanced position-error integral"""
    error = np.asarray(r_des, dtype=float) - state.r
    v_ref = np.zeros(3) if v_des is None else np.asarray(v_des, dtype=float)
    error_rate = v_ref - state.v
    accel = (np.array([0.0, 0.0, gravity])
             + np.asarray(gains.Kp_r) * error
             + np.asarray(gains.Ki_r) * integral
             + np.asarray(gains.Kd_r) * error_rate)
    return mass * accel, np.asarray(integral, dtype=float) + error * dt


def pid_position_control(state: RigidBodyState, r_des: Sequence[float], integral: np.ndarray,
                         gains: ControllerGains, mass: float, gravity: float,
                         v_des: Optional[Sequence[float]] = None, dt: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Desired force expressed in the body frame.

    Returns:
        (f_des, new_integral) with f_des = m·R⁻¹(g + Kp·e + Ki·∫e + Kd·ė)
    """
    f_world, new_integral = desired_world_force(state, r_des, integral, gains, mass, gravity, v_des, dt)
    return rotation_matrix(state.euler).T @ f_world, new_integral


def force_to_attitude(f_des: Sequence[float], psi_des: float) -> Tuple[float, float]:
    """Roll and pitch that align the thrust axis with a world-frame force"""
    f_bar = yaw_matrix(psi_des).T @ np.asarray(f_des, dtype=float)
    if f_bar[2] <= 0.0:
        raise InfeasibleAttitudeError(f"Requested force has no upward component: {f_bar.tolist()}")
    phi = math.atan2(-f_bar[1], math.hypot(f_bar[0], f_bar[2]))
    theta = math.atan2(f_bar[0], f_bar[2])
    return phi, theta


@dataclass
class FlightSetpoint:
    """
    mode is one of:
      'position' - hold r_des with the full PID
      'velocity' - track v_des horizontally while holding altitude r_des[2]
      'attitude' - level attitude with altitude hold, no horizontal hold
      'off'      - propellers stopped
    """
    mode: str = 'position'
    r_des: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v_des: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0


class FlightController:
    """Cascaded position PID and attitude LQI with thrust saturation and anti-windup"""

    def __init__(self, params: FlightParams, gains: ControllerGains):
        self.params = params
        self.gains = gains
        # allocation held at its nominal value for control
        self.allocation = allocation_matrix(params.rotors)
        self.q_rot = self.allocation[3:6, :]
        self.inertia = params.inertia_matrix
        self.collective = np.linalg.pinv(self.allocation)[:, 2]
        A, B = build_attitude_model(self.inertia, self.q_rot)
        self.synthesis = solve_riccati(A, B, gains.M_weights, gains.N_weights)
        self.K = self.synthesis.K
        self.attitude_integral = np.zeros(3)
        self.position_integral = np.zeros(3)
        self.saturated = False
        logger.info(f"Attitude LQI synthesized (Riccati residual {self.synthesis.residual:.3e})")

    def reset(self) -> None:
        self.attitude_integral = np.zeros(3)
        self.position_integral = np.zeros(3)
        self.saturated = False

    def compute(self, state: RigidBodyState, setpoint: FlightSetpoint, dt: float) -> np.ndarray:
        """Saturated rotor thrusts for one control period"""
        if setpoint.mode == 'off':
            self.reset()
            return np.zeros(4)

        r_des = np.asarray(setpoint.r_des, dtype=float).copy()
        v_des = np.asarray(setpoint.v_des, dtype=float).copy()
        if setpoint.mode in ('velocity', 'attitude'):
            r_des[0:2] = state.r[0:2]
        if setpoint.mode == 'attitude':
            v_des[0:2] = state.v[0:2]

        f_world, position_integral = desired_world_force(
            state, r_des, self.position_integral, self.gains, self.params.mass,
            self.params.gravity, v_des, dt,
        )
        if setpoint.mode == 'attitude':
            phi_des, theta_des = 0.0, 0.0
        else:
            try:
                phi_des, theta_des = force_to_attitude(f_world, setpoint.yaw)
            except InfeasibleAttitudeError:
                logger.warning('Downward force request; commanding level attitude')
                phi_des, theta_des = 0.0, 0.0
        euler_des = np.array([phi_des, theta_des, setpoint.yaw])

        f_body = rotation_matrix(state.euler).T @ f_world
        lambda_trans = self.collective * f_body[2]
        lambda_rot, attitude_integral = lqi_attitude_control(
            state, euler_des, self.attitude_integral, self.K, self.inertia, self.q_rot, dt,
        )
        raw = lambda_trans + lambda_rot
        thrusts = np.clip(raw, self.params.lambda_min, self.params.lambda_max)
        self.saturated = bool(np.any(thrusts != raw))
        if not self.saturated:
            self.attitude_integral = attitude_integral
            self.position_integral = position_integral
        return thrusts
