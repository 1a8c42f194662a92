"""
Airbag volume model and bottom-to-joint pressure equalization.

Pressures are gauge kPa, lengths mm, volumes mm³. Gas amounts are carried as
absolute pressure times volume (kPa·mm³), which is proportional to mass under
the isothermal assumption.
"""
import logging
import math
from typing import List, NamedTuple, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from config import P_ATM
from utils.errors import AmbiguousDesignError, DesignInfeasibleError, DomainError
from utils.root_finding import bracketed_root, polish_root, real_polynomial_roots

logger = logging.getLogger(__name__)

PRESSURE_TOL = 1e-9
EQUALIZATION_MODELS = ('design', 'isothermal')


class AirbagSpec(BaseModel):
    """Geometry and pneumatic constants of one airbag class"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    short_side: float = Field(gt=0, description='fold short side x [mm]')
    long_side: float = Field(gt=0, description='fold long side y [mm]')
    p_max: float = Field(gt=0, description='full-inflation gauge pressure [kPa]')
    v_res: float = Field(default=0.0, ge=0, description='residual volume [mm³]')
    count: int = Field(default=1, ge=1, description='bags in the circuit')
    segment_short_sides: List[float] = Field(min_length=1)

    @field_validator('segment_short_sides')
    @classmethod
    def _positive_segments(cls, value: List[float]) -> List[float]:
        if any(x <= 0 for x in value):
            raise ValueError('every segment short side must be > 0')
        return value

    @property
    def section_sum(self) -> float:
        """Σ x_k² over the chambers of one bag [mm²]"""
        return sum(x * x for x in self.segment_short_sides)


class VolumeCoefficients(NamedTuple):
    quadratic: float
    linear: float
    constant: float


class DesignSolution(NamedTuple):
    valid_root: float
    all_roots: List[float]


def shape_factor(p: float, p_max: float) -> float:
    """Fraction of x²y occupied by the deformed cross-section at gauge pressure p"""
    if p_max <= 0:
        raise DomainError(f"p_max must be positive, got {p_max}")
    if p < -PRESSURE_TOL or p > p_max + PRESSURE_TOL:
        raise DomainError(f"Pressure {p:.6g} kPa outside [0, {p_max:.6g}]")
    p = min(max(p, 0.0), p_max)
    ratio = p / p_max
    return ratio / (2.0 * math.pi) * (math.pi - (math.pi - 2.0) * ratio)


def airbag_volume(p: float, spec: AirbagSpec) -> float:
    """Volume of a single bag [mm³]; multiply by spec.count for the circuit"""
    return spec.section_sum * spec.long_side * shape_factor(p, spec.p_max) + spec.v_res


def circuit_volume(p: float, spec: Optional[AirbagSpec]) -> float:
    """Total volume of all bags of one class; an absent circuit has zero volume"""
    if spec is None:
        return 0.0
    return spec.count * airbag_volume(p, spec)


def circuit_gas(p: float, spec: Optional[AirbagSpec], p_atm: float = P_ATM) -> float:
    """Absolute pressure times volume of a circuit [kPa·mm³]"""
    return (p + p_atm) * circuit_volume(p, spec)


def circuit_capacitance(p: float, spec: Optional[AirbagSpec], p_atm: float = P_ATM) -> float:
    """d/dp of the circuit gas content [mm³]; a gas rate divided by this is a pressure rate"""
    if spec is None:
        return 0.0
    shape_slope = (math.pi - 2.0 * (math.pi - 2.0) * p / spec.p_max) / (2.0 * math.pi * spec.p_max)
    volume_slope = spec.count * spec.section_sum * spec.long_side * shape_slope
    return circuit_volume(p, spec) + (p + p_atm) * volume_slope


def volume_coefficients(spec: AirbagSpec) -> VolumeCoefficients:
    """
    Expand one bag's volume into -a·p² + b·p + v_res.

    The quadratic coefficient is returned with its sign, so for the usual
    geometry it is negative.
    """
    scale = spec.section_sum * spec.long_side
    quadratic = -scale * (math.pi - 2.0) / (2.0 * math.pi * spec.p_max ** 2)
    linear = scale / (2.0 * spec.p_max)
    return VolumeCoefficients(quadratic, linear, spec.v_res)


def _check_model(model: str) -> None:
    if model not in EQUALIZATION_MODELS:
        raise DomainError(f"Unknown equalization model '{model}', expected one of {EQUALIZATION_MODELS}")


def _initial_gas(p0: float, joint: Optional[AirbagSpec], bottom: AirbagSpec,
                 model: str, p_joint0: float, p_atm: float) -> float:
    """Gas content before the transfer path opens"""
    if model == 'design':
        # joint residual volume counted at the bottom pre-charge pressure
        residual = circuit_volume(0.0, joint)
        return (p0 + p_atm) * (circuit_volume(p0, bottom) + residual)
    return circuit_gas(p0, bottom, p_atm) + circuit_gas(p_joint0, joint, p_atm)


def _final_gas(p1: float, joint: Optional[AirbagSpec], bottom: AirbagSpec, p_atm: float) -> float:
    return (p1 + p_atm) * (circuit_volume(p1, bottom) + circuit_volume(p1, joint))


def equalized_pressure_forward(
    p0: float,
    joint: Optional[AirbagSpec],
    bottom: AirbagSpec,
    model: str = 'design',
    p_joint0: float = 0.0,
    p_atm: float = P_ATM,
) -> float:
    """
    Common pressure after the bottom reservoir vents into the joint circuit.

    Args:
        p0: Bottom pre-charge [kPa gauge]
        joint: Joint airbag class, or None for an empty joint circuit
        bottom: Bottom airbag class
        model: 'design' reproduces the sizing relation used to choose p0;
            'isothermal' is the strict mass balance with the joint at p_joint0
        p_joint0: Initial joint pressure, used by the isothermal model only
        p_atm: Ambient absolute pressure [kPa]

    Returns:
        Equalized gauge pressure [kPa]
    """
    _check_model(model)
    if p0 < -PRESSURE_TOL or p0 > bottom.p_max + PRESSURE_TOL:
        raise DomainError(f"Bottom pre-charge {p0:.6g} kPa outside [0, {bottom.p_max:.6g}]")
    if model == 'design' and p_joint0 != 0.0:
        raise DomainError("The design relation assumes an empty joint circuit (p_joint0 = 0)")
    p0 = min(max(p0, 0.0), bottom.p_max)
    if p0 == 0.0 and p_joint0 == 0.0:
        return 0.0

    target = _initial_gas(p0, joint, bottom, model, p_joint0, p_atm)
    upper = max(p0, p_joint0)
    result = bracketed_root(
        lambda p1: _final_gas(p1, joint, bottom, p_atm) - target,
        0.0, upper, label=f'equalized pressure from p0={p0:.6g}',
    )
    logger.debug(f"Equalization ({model}): p0={p0:.6g} -> p1={result:.6g} kPa")
    return result


def _cubic_in_p0(p1: float, joint: Optional[AirbagSpec], bottom: AirbagSpec,
                 model: str, p_joint0: float, p_atm: float) -> Tuple[float, float, float, float]:
    """Coefficients (highest degree first) of the equalization relation as a cubic in p0"""
    quadratic, linear, constant = volume_coefficients(bottom)
    a = bottom.count * quadratic
    b = bottom.count * linear
    c = bottom.count * constant
    extra = 0.0
    if model == 'design':
        c += circuit_volume(0.0, joint)
    else:
        extra = circuit_gas(p_joint0, joint, p_atm)
    rhs = _final_gas(p1, joint, bottom, p_atm)
    # (p0 + p_atm)(a p0² + b p0 + c) + extra - rhs = 0
    return (a, b + a * p_atm, c + b * p_atm, c * p_atm + extra - rhs)


def initial_pressure_for_target(
    p1: float,
    joint: Optional[AirbagSpec],
    bottom: AirbagSpec,
    model: str = 'design',
    p_joint0: float = 0.0,
    p_atm: float = P_ATM,
) -> DesignSolution:
    """
    Bottom pre-charge that equalizes to the requested joint pressure.

    All real roots of the cubic are reported; the valid one is the single root
    inside [0, bottom.p_max].
    """
    _check_model(model)
    if not 0.0 < p1 < bottom.p_max:
        raise DesignInfeasibleError(
            f"Target {p1:.6g} kPa must lie strictly inside (0, {bottom.p_max:.6g}) kPa"
        )
    if joint is not None and p1 > joint.p_max:
        raise DesignInfeasibleError(f"Target {p1:.6g} kPa exceeds joint p_max {joint.p_max:.6g} kPa")

    coefficients = _cubic_in_p0(p1, joint, bottom, model, p_joint0, p_atm)
    roots = real_polynomial_roots(coefficients)
    tol = 1e-6 * max(1.0, bottom.p_max)
    candidates = [r for r in roots if -tol <= r <= bottom.p_max + tol]

    if not candidates:
        logger.warning(f"No admissible pre-charge for target {p1:.6g} kPa; roots {roots}")
        raise DesignInfeasibleError(
            f"No root in [0, {bottom.p_max:.6g}] kPa for target {p1:.6g} kPa (roots: "
            + ', '.join(f'{r:.6g}' for r in roots) + ')',
            roots=roots,
        )
    if len(candidates) > 1:
        raise AmbiguousDesignError(
            f"Several admissible pre-charges for target {p1:.6g} kPa: "
            + ', '.join(f'{r:.6g}' for r in candidates),
            roots=roots,
        )

    def residual(p0: float) -> float:
        return _initial_gas(p0, joint, bottom, model, p_joint0, p_atm) - _final_gas(p1, joint, bottom, p_atm)

    valid = polish_root(residual, min(max(candidates[0], 0.0), bottom.p_max), 0.0, bottom.p_max)
    logger.info(f"Design pre-charge for {p1:.6g} kPa: {valid:.6g} kPa (roots {', '.join(f'{r:.6g}' for r in roots)})")
    return DesignSolution(valid, roots)
