import copy
import json
import logging
import os
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from config import DEFAULT_DT, MAX_DT, PHASES
from services.arm_service import ArmGeometry, MassBudget, TorqueCoefficients, hover_thrust_check
from services.flight_controller import ControllerGains
from services.flight_dynamics import FlightParams, box_inertia
from services.mission_service import ApproachGains, MissionThresholds
from services.pneumatic_plant import FlowParams, PwmParams
from services.pneumatics_service import AirbagSpec
from utils.errors import ConfigError

logger = logging.getLogger(__name__)


class RobotConfig(BaseModel):
    """Everything that describes the robot; one JSON document"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    joint_airbag: AirbagSpec
    bottom_airbag: AirbagSpec
    flow: FlowParams
    pwm: PwmParams = Field(default_factory=PwmParams)
    arm: ArmGeometry = Field(default_factory=ArmGeometry)
    torque_coefficients: TorqueCoefficients
    mass_budget: MassBudget
    flight: FlightParams
    gains: ControllerGains = Field(default_factory=ControllerGains)
    mission: MissionThresholds = Field(default_factory=MissionThresholds)
    approach: ApproachGains = Field(default_factory=ApproachGains)
    dt: float = Field(default=DEFAULT_DT, gt=0, le=MAX_DT)

    @model_validator(mode='before')
    @classmethod
    def _flight_defaults(cls, data: Any) -> Any:
        # mass, box-model inertia and the arm-rigidity thrust floor follow the mass budget unless given
        if not isinstance(data, dict):
            return data
        flight = data.get('flight')
        budget = data.get('mass_budget')
        if isinstance(flight, dict) and isinstance(budget, dict):
            flight = dict(flight)
            if 'mass' not in flight:
                try:
                    flight['mass'] = (float(budget['m_body']) + 4 * float(budget['m_arm'])
                                      + 4 * float(budget['m_rotor']))
                except (KeyError, TypeError, ValueError):
                    return data
            if 'inertia' not in flight:
                try:
                    flight['inertia'] = box_inertia(float(flight['mass']))
                except (TypeError, ValueError):
                    return data
            if 'lambda_min' not in flight:
                try:
                    flight['lambda_min'] = hover_thrust_check(MassBudget.model_validate(budget)).rigidity_bound
                except ValidationError:
                    return data
            data = dict(data, flight=flight)
        return data

    @model_validator(mode='after')
    def _cross_checks(self) -> 'RobotConfig':
        joint = self.joint_airbag
        if joint.segment_short_sides != [joint.short_side]:
            raise ValueError('joint_airbag.segment_short_sides must equal [short_side]')
        if self.mission.p_joint_max > joint.p_max:
            raise ValueError('mission.p_joint_max exceeds joint_airbag.p_max')
        if self.mission.p_bottom_reach >= self.bottom_airbag.p_max:
            raise ValueError('mission.p_bottom_reach must be below bottom_airbag.p_max')
        if abs(self.flight.mass - self.mass_budget.total) > 1e-6 * max(1.0, self.mass_budget.total):
            logger.warning(
                f"flight.mass {self.flight.mass:.6g} kg differs from the mass budget total "
                f"{self.mass_budget.total:.6g} kg"
            )
        return self


class InitialState(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    position: List[float] = Field(default_factory=lambda: [0.0, 0.0, 1.5], min_length=3, max_length=3)
    euler: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0], min_length=3, max_length=3)
    velocity: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0], min_length=3, max_length=3)
    omega: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0], min_length=3, max_length=3)


class InitialPressures(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    p_joint: float = Field(default=0.0, ge=0)
    p_bottom: float = Field(default=0.0, ge=0)


class HumanEvent(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    t: float = Field(ge=0)
    distance: Optional[float] = Field(default=None, ge=0)
    arm_presented: bool = False
    dropout: bool = False
    outlier: bool = False


class LeakWindow(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    start: float = Field(ge=0)
    end: float = Field(gt=0)
    circuit: Literal['joint', 'bottom']
    rate: float = Field(ge=0, description='kPa/s')


class Disturbance(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    start: float = Field(ge=0)
    end: float = Field(gt=0)
    torque: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0], min_length=3, max_length=3)
    force: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0], min_length=3, max_length=3)


class RotorTilt(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    rotor: int = Field(ge=0, le=3)
    angle: float = Field(ge=0, le=1.0, description='rad')


class ValveSetting(BaseModel):
    """Fixed pneumatic command used when the mission FSM is disabled"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    sv1: bool = False
    sv2: bool = False
    pump_pwm: float = Field(default=0.0, ge=0, le=1)


class ScenarioScript(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    name: str = Field(min_length=1)
    description: str = ''
    duration: float = Field(ge=0)
    dt: Optional[float] = Field(default=None, gt=0, le=MAX_DT)
    initial_state: InitialState = Field(default_factory=InitialState)
    initial_pressures: InitialPressures = Field(default_factory=InitialPressures)
    mission_enabled: bool = True
    initial_phase: Literal['Search', 'Approach', 'Reach', 'Perch', 'Deperch'] = 'Search'
    flight_mode: Literal['position', 'attitude', 'off'] = 'position'
    valves: ValveSetting = Field(default_factory=ValveSetting)
    cruise_altitude: Optional[float] = None
    support_height: Optional[float] = None
    human: List[HumanEvent] = Field(default_factory=list)
    leaks: List[LeakWindow] = Field(default_factory=list)
    disturbances: List[Disturbance] = Field(default_factory=list)
    rotor_tilts: List[RotorTilt] = Field(default_factory=list)
    deperch_request_at: Optional[float] = Field(default=None, ge=0)
    overrides: Dict[str, Dict[str, Any]] = Field(default_factory=dict)

    @model_validator(mode='after')
    def _ordered(self) -> 'ScenarioScript':
        times = [event.t for event in self.human]
        if times != sorted(times):
            raise ValueError('human samples must be in time order')
        for window in list(self.leaks) + list(self.disturbances):
            if window.end <= window.start:
                raise ValueError('time windows need end > start')
        if self.initial_phase not in PHASES:
            raise ValueError(f"unknown phase {self.initial_phase}")
        return self

    @property
    def altitude(self) -> float:
        if self.cruise_altitude is not None:
            return self.cruise_altitude
        return self.initial_state.position[2]


def describe_validation_error(error: ValidationError, prefix: str = '') -> str:
    """One 'dotted.field.path: message' entry per failed constraint"""
    parts = []
    for item in error.errors():
        path = '.'.join(str(p) for p in item['loc'])
        if prefix:
            path = f"{prefix}.{path}" if path else prefix
        parts.append(f"{path or '<root>'}: {item['msg']}")
    return '; '.join(parts)


def _deep_merge(base: Dict[str, Any], patch: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in patch.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class ConfigService:
    """Loads and validates the robot configuration and scenario scripts"""

    def __init__(self, config_path: str):
        self.config_path = config_path
        self.raw = self._read_json(config_path)
        self.robot = self.parse_robot(self.raw, source=config_path)
        logger.info(f"Loaded robot configuration from {config_path}")

    @staticmethod
    def _read_json(path: str) -> Dict[str, Any]:
        """Read a JSON object from disk"""
        if not os.path.exists(path):
            raise ConfigError(f"file not found: {path}")
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}", field=path) from e
        if not isinstance(data, dict):
            raise ConfigError('top level must be a JSON object', field=path)
        return data

    @staticmethod
    def parse_robot(data: Dict[str, Any], source: str = '<memory>') -> RobotConfig:
        try:
            return RobotConfig.model_validate(data)
        except ValidationError as e:
            message = describe_validation_error(e)
            logger.error(f"Invalid robot configuration {source}: {message}")
            raise ConfigError(message) from e

    @staticmethod
    def parse_scenario(data: Dict[str, Any], source: str = '<memory>') -> ScenarioScript:
        try:
            return ScenarioScript.model_validate(data)
        except ValidationError as e:
            message = describe_validation_error(e)
            logger.error(f"Invalid scenario {source}: {message}")
            raise ConfigError(message) from e

    def load_scenario(self, path: str) -> ScenarioScript:
        """Read and validate a scenario script"""
        script = self.parse_scenario(self._read_json(path), source=path)
        logger.info(f"Loaded scenario '{script.name}' from {path} ({script.duration:g} s)")
        return script

    def resolve(self, script: ScenarioScript, dt: Optional[float] = None) -> RobotConfig:
        """Robot configuration with the scenario overrides and a dt override applied"""
        data = self.raw
        if script.overrides:
            unknown = set(script.overrides) - set(RobotConfig.model_fields)
            if unknown:
                raise ConfigError(f"unknown configuration section(s): {', '.join(sorted(unknown))}",
                                  field='overrides')
            data = _deep_merge(data, script.overrides)
        if dt is not None:
            data = dict(data, dt=dt)
        elif script.dt is not None:
            data = dict(data, dt=script.dt)
        return self.parse_robot(data, source=f"{self.config_path} + {script.name}")

    def with_dt(self, dt: Optional[float]) -> RobotConfig:
        if dt is None:
            return self.robot
        return self.parse_robot(dict(self.raw, dt=dt), source=f"{self.config_path} (dt={dt})")
