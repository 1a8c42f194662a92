"""Time-stepped pump/valve/check-valve plumbing between the bottom and joint circuits."""
import logging
from dataclasses import dataclass, field, replace
from typing import List

from pydantic import BaseModel, ConfigDict, Field

from config import P_ATM
from services.pneumatics_service import AirbagSpec, circuit_capacitance, circuit_gas, circuit_volume
from services.valve_service import FlowMode, valve_logic
from utils.errors import DomainError
from utils.root_finding import bracketed_root

logger = logging.getLogger(__name__)

CLAMP_TOL = 1e-6


class FlowParams(BaseModel):
    """Orifice constants of the plumbing; gas rates are in kPa·mm³/s"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    pump_conductance: float = Field(ge=0, description='kPa/s at full PWM into reference_volume; 0 disables the pump')
    reference_volume: float = Field(default=1.0e5, gt=0, description='mm³')
    valve_conductance: float = Field(gt=0, description='bottom->joint orifice constant')
    exhaust_conductance: float = Field(gt=0, description='joint vent orifice constant')
    leak_joint: float = Field(default=0.0, ge=0, description='constant joint leak [kPa/s]')
    leak_bottom: float = Field(default=0.0, ge=0, description='constant bottom leak [kPa/s]')


class PwmParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    kp: float = Field(default=0.05, ge=0)
    pwm_min: float = Field(default=0.2, ge=0, le=1)


@dataclass
class PneumaticState:
    """Gauge pressures of both circuits plus the current valve and pump command"""
    p_joint: float = 0.0
    p_bottom: float = 0.0
    sv1: bool = False
    sv2: bool = False
    pump_pwm: float = 0.0
    p_atm: float = P_ATM
    events: List[str] = field(default_factory=list)

    @property
    def pump_on(self) -> bool:
        return self.pump_pwm > 0.0

    def flow_mode(self) -> FlowMode:
        return valve_logic(self.sv1, self.sv2, self.pump_on, self.p_joint, self.p_bottom)

    def with_command(self, sv1: bool, sv2: bool, pump_pwm: float) -> 'PneumaticState':
        """Copy with a new valve/pump command; the event log is shared"""
        if not 0.0 <= pump_pwm <= 1.0:
            raise DomainError(f"pump_pwm {pump_pwm} outside [0, 1]")
        return replace(self, sv1=bool(sv1), sv2=bool(sv2), pump_pwm=float(pump_pwm))


def line_volume(joint: AirbagSpec) -> float:
    """Residual volume of the joint circuit, charged together with the bottom bag [mm³]"""
    return circuit_volume(0.0, joint)


def _side_gas(p: float, spec: AirbagSpec, offset: float, p_atm: float) -> float:
    return circuit_gas(p, spec, p_atm) + (p + p_atm) * offset


def total_gas(state: PneumaticState, joint: AirbagSpec, bottom: AirbagSpec) -> float:
    """Σ (p + p_atm)·V over both sides of the check valve [kPa·mm³]"""
    line = line_volume(joint)
    return (_side_gas(state.p_joint, joint, -line, state.p_atm)
            + _side_gas(state.p_bottom, bottom, line, state.p_atm))


def pressure_from_gas(gas: float, spec: AirbagSpec, p_atm: float = P_ATM, offset: float = 0.0):
    """
    Invert the isothermal gas content of a circuit.

    offset is a volume added to (or, negative, removed from) the circuit, as
    the joint residual line is moved to the bottom side.

    Returns:
        (pressure, clamp) where clamp is None, 'floor' or 'ceiling'
    """
    floor_gas = _side_gas(0.0, spec, offset, p_atm)
    ceiling_gas = _side_gas(spec.p_max, spec, offset, p_atm)
    if gas <= floor_gas:
        return 0.0, ('floor' if gas < floor_gas - CLAMP_TOL * max(1.0, abs(floor_gas)) else None)
    if gas >= ceiling_gas:
        return spec.p_max, ('ceiling' if gas > ceiling_gas * (1.0 + CLAMP_TOL) else None)
    pressure = bracketed_root(lambda p: _side_gas(p, spec, offset, p_atm) - gas, 0.0, spec.p_max,
                              label='circuit pressure')
    return pressure, None


def step_pneumatics(state: PneumaticState, flow: FlowParams, joint: AirbagSpec,
                    bottom: AirbagSpec, dt: float) -> PneumaticState:
    """
    Advance both circuit pressures by one explicit step of the orifice model.

    SV1 ON sends the pump into the bottom bag, otherwise into the joints. SV2 ON
    vents the joints and closes the transfer line; with SV2 OFF the check valve
    passes bottom->joint flow only while the bottom pressure is higher.

    The joint residual volume sits upstream of the check valve and is counted
    with the bottom bag, so a transfer from an empty joint circuit ends at
    equalized_pressure_forward(p0, joint, bottom) with the design model.
    """
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")

    d_joint = 0.0
    d_bottom = 0.0

    pump_rate = state.pump_pwm * flow.pump_conductance * flow.reference_volume
    if pump_rate > 0.0:
        if state.sv1:
            d_bottom += pump_rate
        else:
            d_joint += pump_rate

    if state.sv2:
        d_joint -= flow.exhaust_conductance * state.p_joint
    elif state.p_bottom > state.p_joint:
        transfer = flow.valve_conductance * (state.p_bottom - state.p_joint)
        d_joint += transfer
        d_bottom -= transfer

    line = line_volume(joint)
    if flow.leak_joint > 0.0 and state.p_joint > 0.0:
        d_joint -= flow.leak_joint * (circuit_capacitance(state.p_joint, joint, state.p_atm) - line)
    if flow.leak_bottom > 0.0 and state.p_bottom > 0.0:
        d_bottom -= flow.leak_bottom * (circuit_capacitance(state.p_bottom, bottom, state.p_atm) + line)

    if d_joint == 0.0 and d_bottom == 0.0:
        return replace(state)

    p_joint, p_bottom = state.p_joint, state.p_bottom
    if d_joint != 0.0:
        gas = _side_gas(state.p_joint, joint, -line, state.p_atm) + d_joint * dt
        p_joint, clamp = pressure_from_gas(gas, joint, state.p_atm, offset=-line)
        _record_clamp(state.events, 'joint', clamp, p_joint)
    if d_bottom != 0.0:
        gas = _side_gas(state.p_bottom, bottom, line, state.p_atm) + d_bottom * dt
        p_bottom, clamp = pressure_from_gas(gas, bottom, state.p_atm, offset=line)
        _record_clamp(state.events, 'bottom', clamp, p_bottom)

    return replace(state, p_joint=p_joint, p_bottom=p_bottom)


def _record_clamp(events: List[str], circuit: str, clamp, pressure: float) -> None:
    if clamp is None:
        return
    message = f"{circuit} pressure clamped at {clamp} ({pressure:.6g} kPa)"
    events.append(message)
    if clamp == 'ceiling':
        logger.warning(message)
    else:
        logger.debug(message)


def pwm_controller(p_target: float, p_cur: float, kp: float, pwm_min: float) -> float:
    """Proportional pump PWM; zero at or above the target pressure"""
    if kp < 0 or not 0.0 <= pwm_min <= 1.0:
        raise DomainError(f"Invalid PWM gains kp={kp}, pwm_min={pwm_min}")
    if p_cur >= p_target:
        return 0.0
    return min(max((p_target - p_cur) * kp + pwm_min, 0.0), 1.0)


def fill_time(p_bottom0: float, p_target: float, flow: FlowParams, joint: AirbagSpec,
              bottom: AirbagSpec, dt: float = 1e-3, horizon: float = 60.0) -> float:
    """
    Seconds for the joints to reach p_target from empty with the pump at full
    PWM and the transfer line open, starting from a bottom pre-charge.

    Returns infinity when the target is not reached within the horizon.
    """
    state = PneumaticState(p_joint=0.0, p_bottom=p_bottom0, sv1=False, sv2=False, pump_pwm=1.0)
    t = 0.0
    while t < horizon:
        if state.p_joint >= p_target:
            return t
        state = step_pneumatics(state, flow, joint, bottom, dt)
        t += dt
    logger.warning(f"Joint did not reach {p_target:.6g} kPa within {horizon:.6g} s")
    return float('inf')
