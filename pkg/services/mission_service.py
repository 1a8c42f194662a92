"""
Perching mission state machine.

Phases run Search -> Approach -> Reach -> Perch -> Deperch -> Approach. Every
transition except Approach -> Reach (and the Search placeholder) is gated by
a pressure predicate; a failed predicate leaves the phase unchanged.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from transitions import Machine

from config import PHASES
from services.flight_controller import FlightSetpoint
from services.flight_dynamics import RigidBodyState
from services.pneumatic_plant import PneumaticState, PwmParams, pwm_controller

logger = logging.getLogger(__name__)


class MissionThresholds(BaseModel):
    """Pressure gates [kPa] and distances [m] of the perching sequence"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    p_bottom_approach: float = Field(default=20.0, gt=0)
    p_bottom_reach: float = Field(default=40.0, gt=0)
    p_joint_rigidity: float = Field(default=19.0, gt=0)
    p_joint_max: float = Field(default=50.0, gt=0)
    d_goal: float = Field(default=0.5, gt=0)
    pump_fallback_delay: float = Field(default=1.5, ge=0)
    p_joint_refill: float = Field(default=40.0, gt=0)
    p_bottom_refill: float = Field(default=20.0, ge=0)
    p_joint_exhausted: float = Field(default=1.0, ge=0)
    altitude_tolerance: float = Field(default=0.1, gt=0)

    @model_validator(mode='after')
    def _ordering(self) -> 'MissionThresholds':
        if not 0.0 < self.p_joint_rigidity < self.p_joint_max:
            raise ValueError('need 0 < p_joint_rigidity < p_joint_max')
        if self.p_joint_refill > self.p_joint_max:
            raise ValueError('p_joint_refill must not exceed p_joint_max')
        return self


class ApproachGains(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    kp: float = Field(default=0.5, ge=0)
    kd: float = Field(default=0.0, ge=0)
    v_max: float = Field(default=1.0, gt=0)
    outlier_threshold: float = Field(default=0.5, gt=0, description='largest plausible jump between samples [m]')


@dataclass
class HumanSample:
    """Scripted stand-in for the perception output"""
    distance: Optional[float] = None
    arm_presented: bool = False
    dropout: bool = False
    outlier: bool = False

    @property
    def visible(self) -> bool:
        return not self.dropout and self.distance is not None


class PumpMode(str, Enum):
    OFF = 'OFF'
    ON = 'ON'
    NEEDED = 'ON(Needed)'
    MAXIMUM = 'ON(Maximum)'


class ValveCommand(NamedTuple):
    pump: PumpMode
    sv1: bool
    sv2: bool
    description: str


# (phase, stage) -> valve and pump command
COMMAND_TABLE: Dict[Tuple[str, str], ValveCommand] = {
    ('Search', 'idle'): ValveCommand(PumpMode.OFF, False, False, 'Idle'),
    ('Approach', 'pre_inflate'): ValveCommand(PumpMode.NEEDED, True, True, 'Bottom actuator pre-inflated'),
    ('Reach', 'charge'): ValveCommand(PumpMode.ON, True, True, 'Bottom actuator is inflated at P0'),
    ('Reach', 'transfer'): ValveCommand(PumpMode.OFF, False, False,
                                        'Joint actuator is inflated until maintaining arm rigidity'),
    ('Reach', 'transfer_assist'): ValveCommand(PumpMode.MAXIMUM, False, False,
                                               'Pump assists the transfer'),
    ('Perch', 'fill'): ValveCommand(PumpMode.MAXIMUM, False, False, 'Joint actuator is fully pressurized'),
    ('Perch', 'hold'): ValveCommand(PumpMode.OFF, False, False, 'Pressure hold'),
    ('Deperch', 'exhaust'): ValveCommand(PumpMode.OFF, False, True, 'Air Exhausted'),
}

ENTRY_STAGE = {
    'Search': 'idle',
    'Approach': 'pre_inflate',
    'Reach': 'charge',
    'Perch': 'fill',
    'Deperch': 'exhaust',
}

TRANSITIONS = [
    {'trigger': 'detect_human', 'source': 'Search', 'dest': 'Approach', 'conditions': 'human_visible'},
    {'trigger': 'reach_out', 'source': 'Approach', 'dest': 'Reach', 'conditions': 'at_goal'},
    {'trigger': 'perch', 'source': 'Reach', 'dest': 'Perch', 'conditions': 'arm_rigid'},
    {'trigger': 'release', 'source': 'Perch', 'dest': 'Deperch',
     'conditions': ['deperch_requested', 'hold_completed', 'grip_pressurized']},
    {'trigger': 'take_off', 'source': 'Deperch', 'dest': 'Approach',
     'conditions': ['joint_exhausted', 'altitude_recovered']},
]

PHASE_TRIGGER = {
    'Search': 'detect_human',
    'Approach': 'reach_out',
    'Reach': 'perch',
    'Perch': 'release',
    'Deperch': 'take_off',
}


class Observation(NamedTuple):
    pneu: PneumaticState
    flight: RigidBodyState
    human: HumanSample
    deperch_requested: bool


class FsmOutput(NamedTuple):
    command: ValveCommand
    pump_pwm: float
    setpoint: FlightSetpoint


class MissionState:
    """FSM phase, sub-stage, timers and the append-only event log"""

    def __init__(self, thresholds: MissionThresholds, cruise_altitude: float,
                 initial: str = 'Search', t: float = 0.0):
        self.thresholds = thresholds
        self.cruise_altitude = cruise_altitude
        self.t = t
        self.phase_timer = 0.0
        self.stage = ENTRY_STAGE[initial]
        self.stage_timer = 0.0
        self.hold_reached = False
        self.hold_position: Optional[np.ndarray] = None
        self.d_prev: Optional[float] = None
        self.previous_phase = initial
        self.events: List[Dict] = []
        self.observation: Optional[Observation] = None
        self.machine = Machine(
            model=self,
            states=PHASES,
            transitions=TRANSITIONS,
            initial=initial,
            model_attribute='phase',
            auto_transitions=False,
            ignore_invalid_triggers=True,
            after_state_change='_on_phase_change',
        )

    # conditions ---------------------------------------------------------
    def human_visible(self) -> bool:
        return self.observation.human.visible

    def at_goal(self) -> bool:
        human = self.observation.human
        return (human.visible and not human.outlier and human.arm_presented
                and human.distance <= self.thresholds.d_goal)

    def arm_rigid(self) -> bool:
        return (self.stage in ('transfer', 'transfer_assist')
                and self.observation.pneu.p_joint >= self.thresholds.p_joint_rigidity)

    def deperch_requested(self) -> bool:
        return self.observation.deperch_requested

    def hold_completed(self) -> bool:
        return self.hold_reached

    def grip_pressurized(self) -> bool:
        return self.observation.pneu.p_joint >= self.thresholds.p_joint_refill

    def joint_exhausted(self) -> bool:
        return self.observation.pneu.p_joint <= self.thresholds.p_joint_exhausted

    def altitude_recovered(self) -> bool:
        error = abs(self.observation.flight.r[2] - self.cruise_altitude)
        return error < self.thresholds.altitude_tolerance

    # callbacks ----------------------------------------------------------
    def _on_phase_change(self) -> None:
        previous = self.previous_phase
        self.previous_phase = self.phase
        self.phase_timer = 0.0
        self.hold_reached = False
        self._set_stage(ENTRY_STAGE[self.phase], log=False)
        self.stage_timer = 0.0
        if self.phase in ('Reach', 'Deperch'):
            self.hold_position = self.observation.flight.r.copy()
        self.record('phase', previous_phase=previous)
        logger.info(f"t={self.t:.3f}s phase -> {self.phase} ({self.stage})")

    def _set_stage(self, stage: str, log: bool = True) -> None:
        if stage == self.stage:
            return
        self.stage = stage
        self.stage_timer = 0.0
        if stage == 'hold':
            self.hold_reached = True
        if log:
            self.record('stage')
            logger.info(f"t={self.t:.3f}s {self.phase} stage -> {stage}")

    def record(self, kind: str, **extra) -> None:
        pneu = self.observation.pneu if self.observation else None
        entry = {
            't': self.t,
            'kind': kind,
            'phase': self.phase,
            'stage': self.stage,
            'p_joint': pneu.p_joint if pneu else None,
            'p_bottom': pneu.p_bottom if pneu else None,
        }
        entry.update(extra)
        self.events.append(entry)

    @property
    def command(self) -> ValveCommand:
        return COMMAND_TABLE[(self.phase, self.stage)]


def approach_velocity(sample: HumanSample, d_prev: Optional[float], thresholds: MissionThresholds,
                      gains: ApproachGains, dt: float) -> Tuple[float, Optional[float]]:
    """
    Forward speed toward the person from the distance signal.

    Dropouts stop the robot. Outliers, flagged or jumping more than the
    outlier threshold, reuse the previous valid distance.

    Returns:
        (v_des [m/s], distance used)
    """
    if not sample.visible:
        return 0.0, d_prev
    d = sample.distance
    if d_prev is not None and (sample.outlier or abs(d - d_prev) > gains.outlier_threshold):
        logger.debug(f"Distance outlier {d:.3f} m replaced by {d_prev:.3f} m")
        d = d_prev
    elif sample.outlier:
        return 0.0, d_prev

    rate = 0.0 if d_prev is None or dt <= 0 else (d - d_prev) / dt
    v_des = gains.kp * (d - thresholds.d_goal) + gains.kd * rate
    return max(-gains.v_max, min(gains.v_max, v_des)), d


def _pump_pwm(mission: MissionState, command: ValveCommand, pneu: PneumaticState, pwm: PwmParams) -> float:
    thresholds = mission.thresholds
    if command.pump == PumpMode.OFF:
        return 0.0
    if command.sv1:
        target = {
            'Approach': thresholds.p_bottom_approach,
            'Reach': thresholds.p_bottom_reach,
        }[mission.phase]
        current = pneu.p_bottom
    else:
        target = thresholds.p_joint_max
        current = pneu.p_joint
    if command.pump == PumpMode.MAXIMUM:
        return 1.0 if current < target else 0.0
    return pwm_controller(target, current, pwm.kp, pwm.pwm_min)


def _advance_stage(mission: MissionState, pneu: PneumaticState) -> None:
    thresholds = mission.thresholds
    if mission.phase == 'Reach':
        if mission.stage == 'charge' and pneu.p_bottom >= thresholds.p_bottom_reach:
            mission._set_stage('transfer')
        elif (mission.stage == 'transfer' and mission.stage_timer >= thresholds.pump_fallback_delay
              and pneu.p_joint < thresholds.p_joint_rigidity):
            mission._set_stage('transfer_assist')
    elif mission.phase == 'Perch':
        if mission.stage == 'fill' and pneu.p_joint >= thresholds.p_joint_max:
            mission._set_stage('hold')
        elif mission.stage == 'hold':
            # the bottom bag cannot be recharged while perched; a low reservoir only tops up the joints
            bottom_low = pneu.p_bottom < thresholds.p_bottom_refill and pneu.p_joint < thresholds.p_joint_max
            if pneu.p_joint < thresholds.p_joint_refill or bottom_low:
                mission._set_stage('fill')


def _flight_setpoint(mission: MissionState, flight: RigidBodyState, v_forward: float) -> FlightSetpoint:
    phase = mission.phase
    altitude = mission.cruise_altitude
    if phase == 'Perch':
        return FlightSetpoint(mode='off')
    if phase == 'Approach':
        return FlightSetpoint(
            mode='velocity',
            r_des=np.array([flight.r[0], flight.r[1], altitude]),
            v_des=np.array([v_forward, 0.0, 0.0]),
        )
    anchor = mission.hold_position if mission.hold_position is not None else flight.r
    if phase == 'Reach':
        return FlightSetpoint(mode='position', r_des=np.array(anchor, dtype=float))
    if phase == 'Deperch':
        return FlightSetpoint(mode='position', r_des=np.array([anchor[0], anchor[1], altitude]))
    return FlightSetpoint(mode='position', r_des=np.array([flight.r[0], flight.r[1], altitude]))


def fsm_step(mission: MissionState, pneu: PneumaticState, flight_state: RigidBodyState,
             human: HumanSample, dt: float, approach_gains: ApproachGains, pwm: PwmParams,
             deperch_requested: bool = False) -> FsmOutput:
    """
    One mission tick: advance timers, try the phase transition, update the
    sub-stage and read the valve/pump command from COMMAND_TABLE.
    """
    mission.observation = Observation(pneu, flight_state, human, deperch_requested)

    previous_phase = mission.phase
    getattr(mission, PHASE_TRIGGER[mission.phase])()
    if mission.phase == previous_phase:
        _advance_stage(mission, pneu)

    v_forward = 0.0
    if mission.phase == 'Approach':
        v_forward, mission.d_prev = approach_velocity(human, mission.d_prev, mission.thresholds,
                                                      approach_gains, dt)
    elif human.visible and not human.outlier:
        mission.d_prev = human.distance

    command = mission.command
    pump_pwm = _pump_pwm(mission, command, pneu, pwm)
    setpoint = _flight_setpoint(mission, flight_state, v_forward)

    mission.t += dt
    mission.phase_timer += dt
    mission.stage_timer += dt
    return FsmOutput(command, pump_pwm, setpoint)
