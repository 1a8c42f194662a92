"""Hinge torque of the joint airbags, coefficient fitting and arm rigidity checks."""
import logging
import math
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from config import GRAVITY
from utils.errors import DomainError, FitError
from utils.root_finding import bracketed_root

logger = logging.getLogger(__name__)

DEFAULT_HINGE_LIMITS = [5 * math.pi / 18, math.pi / 3, math.pi / 3]


class ArmGeometry(BaseModel):
    """Hinge and link dimensions [m]; torque coefficients are kPa-based"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    l_link: float = Field(default=0.027, gt=0)
    y0: float = Field(default=0.006, ge=0)
    y1: float = Field(default=0.018, gt=0)
    lever_r: float = Field(default=0.0115, gt=0)
    arm_length: float = Field(default=0.17, gt=0)
    hinge_limits: List[float] = Field(default_factory=lambda: list(DEFAULT_HINGE_LIMITS), min_length=1)
    pressure_scale: float = Field(default=1.0, gt=0, description='multiplier from kPa to the fitted pressure unit')

    @model_validator(mode='after')
    def _check_bounds(self) -> 'ArmGeometry':
        if self.y0 >= self.y1:
            raise ValueError(f"y0 ({self.y0}) must be smaller than y1 ({self.y1})")
        if any(limit <= 0 for limit in self.hinge_limits):
            raise ValueError('hinge limits must be positive')
        if sum(self.hinge_limits) > math.pi + 1e-12:
            raise ValueError('hinge limits must sum to at most pi')
        return self


class TorqueCoefficients(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    k0: float = Field(gt=0)
    k1: float
    k2: float


class MassBudget(BaseModel):
    """Component masses [kg]"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    m_body: float = Field(ge=0)
    m_arm: float = Field(ge=0)
    m_rotor: float = Field(ge=0)
    g: float = Field(default=GRAVITY, gt=0)

    @property
    def total(self) -> float:
        return self.m_body + 4.0 * self.m_arm + 4.0 * self.m_rotor


class TorqueFit(NamedTuple):
    coefficients: TorqueCoefficients
    residuals: np.ndarray
    rms: float


class HoverCheck(NamedTuple):
    lambda_hover: float
    rigid: bool
    rigidity_bound: float
    moment_ok: bool


def torque_prefactors(geom: ArmGeometry) -> Tuple[float, float]:
    """Integral constants ½·l·(y1²−y0²) and ⅓·l·(y1³−y0³)"""
    area = 0.5 * geom.l_link * (geom.y1 ** 2 - geom.y0 ** 2)
    moment = geom.l_link * (geom.y1 ** 3 - geom.y0 ** 3) / 3.0
    return area, moment


def pressure_distribution(y: float, theta: float, p0: float, coeffs: TorqueCoefficients) -> float:
    """Airbag pressure at distance y from the hinge for opening angle theta [kPa]"""
    return coeffs.k0 * p0 - coeffs.k1 * p0 * theta - coeffs.k2 * y * theta


def hinge_torque(theta: float, p0: float, geom: ArmGeometry, coeffs: TorqueCoefficients) -> float:
    """Torque about the hinge produced by a joint airbag at pressure p0 [N·m]"""
    if theta < 0 or theta > max(geom.hinge_limits) + 1e-12:
        raise DomainError(f"Hinge angle {theta:.6g} rad outside [0, {max(geom.hinge_limits):.6g}]")
    if p0 < 0:
        raise DomainError(f"Joint pressure must be non-negative, got {p0:.6g}")
    area, moment = torque_prefactors(geom)
    torque = (coeffs.k0 - coeffs.k1 * theta) * p0 * area - coeffs.k2 * theta * moment
    return geom.pressure_scale * torque


def _design_matrix(samples: Sequence[Tuple[float, float, float]], geom: ArmGeometry) -> np.ndarray:
    area, moment = torque_prefactors(geom)
    theta = np.array([s[0] for s in samples], dtype=float)
    p0 = np.array([s[1] for s in samples], dtype=float)
    return geom.pressure_scale * np.column_stack([p0 * area, -theta * p0 * area, -theta * moment])


def fit_torque_coefficients(samples: Sequence[Tuple[float, float, float]], geom: ArmGeometry,
                            relative: bool = False) -> TorqueFit:
    """
    Least-squares fit of (k0, k1, k2) to measured (theta, p0, torque) samples.

    Args:
        samples: (theta [rad], p0 [kPa], torque [N·m]) triples
        geom: Arm geometry the samples were taken on
        relative: Weight rows by 1/|torque| so that errors proportional to the
            reading count equally at every pressure

    Raises:
        FitError: fewer than 3 samples, a single hinge angle, or a rank-deficient system
    """
    if len(samples) < 3:
        raise FitError(f"Need at least 3 samples, got {len(samples)}")
    if len({round(s[0], 12) for s in samples}) < 2:
        raise FitError('Samples must span at least two distinct hinge angles')

    design = _design_matrix(samples, geom)
    torque = np.array([s[2] for s in samples], dtype=float)

    weights = np.ones_like(torque)
    if relative:
        floor = max(float(np.max(np.abs(torque))) * 1e-9, np.finfo(float).tiny)
        weights = 1.0 / np.maximum(np.abs(torque), floor)
    weighted = design * weights[:, None]

    # column scaling keeps the three prefactor magnitudes comparable
    scale = np.linalg.norm(weighted, axis=0)
    if np.any(scale == 0.0):
        raise FitError('Design matrix has an all-zero column')
    scaled = weighted / scale
    if np.linalg.matrix_rank(scaled) < 3:
        raise FitError('Design matrix is rank deficient; vary both pressure and angle')

    solution, _, _, _ = np.linalg.lstsq(scaled, torque * weights, rcond=None)
    k = solution / scale
    residuals = torque - design @ k
    rms = float(np.sqrt(np.mean(residuals ** 2)))
    try:
        coefficients = TorqueCoefficients(k0=float(k[0]), k1=float(k[1]), k2=float(k[2]))
    except ValidationError as e:
        raise FitError(f"Fitted coefficients are not physical: k={k.tolist()}") from e
    logger.info(f"Fitted torque coefficients k0={k[0]:.6g}, k1={k[1]:.6g}, k2={k[2]:.6g} (rms {rms:.3g} N·m)")
    return TorqueFit(coefficients, residuals, rms)


def hover_thrust_check(budget: MassBudget, thrust: Optional[float] = None) -> HoverCheck:
    """
    Per-rotor hover thrust and whether the arm stays rigid under a given thrust.

    Args:
        budget: Component masses
        thrust: Applied per-rotor thrust [N]; defaults to the hover thrust

    Returns:
        HoverCheck with the hover thrust, rigidity verdict, the thrust bound
        and the moment sanity flag
    """
    g = budget.g
    lambda_hover = budget.total * g / 4.0
    bound = budget.m_arm * g / 2.0 + budget.m_rotor * g
    applied = lambda_hover if thrust is None else thrust
    rigid = applied > 0.0 and applied >= bound
    moment_ok = budget.m_body + 2.0 * budget.m_arm >= 0.0
    return HoverCheck(lambda_hover, rigid, bound, moment_ok)


def arm_configuration(joint_pressures: Sequence[float], external_load_torques: Sequence[float],
                      geom: ArmGeometry, coeffs: TorqueCoefficients) -> List[float]:
    """Quasi-static hinge angles where airbag torque balances the load, clamped to the limits"""
    if not len(joint_pressures) == len(external_load_torques) == len(geom.hinge_limits):
        raise DomainError(
            f"Expected {len(geom.hinge_limits)} pressures and loads, got "
            f"{len(joint_pressures)} and {len(external_load_torques)}"
        )

    angles = []
    for index, (pressure, load, limit) in enumerate(zip(joint_pressures, external_load_torques, geom.hinge_limits)):
        def excess(theta: float) -> float:
            return hinge_torque(theta, pressure, geom, coeffs) - load

        if excess(0.0) <= 0.0:
            angles.append(0.0)
        elif excess(limit) >= 0.0:
            logger.debug(f"Hinge {index} clamped at limit {limit:.6g} rad (p={pressure:.6g} kPa)")
            angles.append(limit)
        else:
            angles.append(bracketed_root(excess, 0.0, limit, label=f'hinge {index} equilibrium'))
    return angles


def droop_angle(thrust: float, p_joint: float, rigidity_bound: float, p_joint_rigidity: float,
                geom: ArmGeometry, coeffs: TorqueCoefficients) -> float:
    """
    Tilt of a rotor whose arm hangs under its own weight [rad].

    The chain arm locks straight while the rotor thrust reaches the rigidity
    bound or the joint airbags hold rigidity pressure. Otherwise the
    unsupported weight loads every hinge and the airbags only hold the
    opening arm_configuration finds; the remaining hinge travel is droop.
    """
    if thrust >= rigidity_bound or p_joint >= p_joint_rigidity:
        return 0.0
    load = (rigidity_bound - max(thrust, 0.0)) * geom.arm_length
    count = len(geom.hinge_limits)
    held = arm_configuration([max(p_joint, 0.0)] * count, [load] * count, geom, coeffs)
    droop = sum(limit - angle for limit, angle in zip(geom.hinge_limits, held))
    # a fully hung arm points the thrust axis sideways, not past it
    return min(droop, math.pi / 2)
