"""End-to-end scenario execution: mission, pneumatics and flight advanced once per tick."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from services.arm_service import droop_angle, hover_thrust_check
from services.config_service import RobotConfig, ScenarioScript
from services.flight_controller import FlightController, FlightSetpoint
from services.flight_dynamics import (
    RigidBodyState, allocation_matrix, dynamics_step, settle_on_support, tilt_rotor,
)
from services.mission_service import (
    COMMAND_TABLE, TRANSITIONS, MissionState, PumpMode, fsm_step,
)
from services.pneumatic_plant import PneumaticState, step_pneumatics
from utils.errors import PerchSimError, ScenarioAborted
from utils.scheduler import ScenarioTimeline

logger = logging.getLogger(__name__)

PRESSURE_TOL = 1e-6
HOLD_DRIFT_TOL = 1e-9

LEGAL_TRANSITIONS = {(t['source'], t['dest']) for t in TRANSITIONS}


@dataclass
class TraceRow:
    t: float
    r: np.ndarray
    euler: np.ndarray
    thrusts: np.ndarray
    p_joint: float
    p_bottom: float
    sv1: bool
    sv2: bool
    pump_pwm: float
    mode: str
    phase: str
    stage: str
    arm_tilt: np.ndarray = field(default_factory=lambda: np.zeros(4))


@dataclass
class Trace:
    scenario: str
    dt: float
    rows: List[TraceRow] = field(default_factory=list)
    events: List[Dict] = field(default_factory=list)
    pneumatic_events: List[str] = field(default_factory=list)
    violations: List[str] = field(default_factory=list)
    near_hover_excursions: int = 0
    thresholds: Optional[Dict] = None
    aborted: Optional[str] = None

    @property
    def invariants_ok(self) -> bool:
        return not self.violations and self.aborted is None


def _plant_rotors(config: RobotConfig, script: ScenarioScript):
    rotors = list(config.flight.rotors)
    for tilt in script.rotor_tilts:
        rotors[tilt.rotor] = tilt_rotor(rotors[tilt.rotor], tilt.angle)
        logger.info(f"Rotor {tilt.rotor} tilted by {tilt.angle:.3f} rad in the plant")
    return rotors


def _arm_tilts(config: RobotConfig, thrusts: np.ndarray, p_joint: float, rigidity_bound: float) -> np.ndarray:
    return np.array([
        droop_angle(thrust, p_joint, rigidity_bound, config.mission.p_joint_rigidity,
                    config.arm, config.torque_coefficients)
        for thrust in thrusts
    ])


def _drooped_allocation(rotors, tilts: np.ndarray) -> np.ndarray:
    return allocation_matrix([tilt_rotor(rotor, angle) if angle > 0.0 else rotor
                              for rotor, angle in zip(rotors, tilts)])


def _initial_body(script: ScenarioScript) -> RigidBodyState:
    init = script.initial_state
    return RigidBodyState(
        r=np.asarray(init.position, dtype=float),
        euler=np.asarray(init.euler, dtype=float),
        v=np.asarray(init.velocity, dtype=float),
        omega=np.asarray(init.omega, dtype=float),
    )


def _check_tick(trace: Trace, config: RobotConfig, row: TraceRow, mission: Optional[MissionState],
                before: PneumaticState, after: PneumaticState, leaking: bool) -> None:
    """Runtime invariants for one tick; violations are collected, not raised"""
    joint_max = config.joint_airbag.p_max + PRESSURE_TOL
    bottom_max = config.bottom_airbag.p_max + PRESSURE_TOL
    if not (-PRESSURE_TOL <= after.p_joint <= joint_max and -PRESSURE_TOL <= after.p_bottom <= bottom_max):
        trace.violations.append(
            f"t={row.t:.6g}: pressure out of range (joint {after.p_joint:.6g}, bottom {after.p_bottom:.6g})"
        )
    if mission is None:
        return
    expected = COMMAND_TABLE[(row.phase, row.stage)]
    if (row.sv1, row.sv2) != (expected.sv1, expected.sv2) or (expected.pump == PumpMode.OFF and row.pump_pwm != 0.0):
        trace.violations.append(f"t={row.t:.6g}: command differs from the {row.phase}/{row.stage} row")
    if row.phase == 'Perch' and row.stage == 'hold':
        if row.pump_pwm != 0.0 or row.sv1 or row.sv2:
            trace.violations.append(f"t={row.t:.6g}: pneumatic command active during pressure hold")
        if not leaking and (abs(after.p_joint - before.p_joint) > HOLD_DRIFT_TOL
                            or abs(after.p_bottom - before.p_bottom) > HOLD_DRIFT_TOL):
            trace.violations.append(f"t={row.t:.6g}: pressure drifted during hold without a leak")


def _check_events(trace: Trace, events: List[Dict]) -> None:
    for event in events:
        if event['kind'] != 'phase':
            continue
        step = (event.get('previous_phase'), event['phase'])
        if step not in LEGAL_TRANSITIONS:
            trace.violations.append(f"t={event['t']:.6g}: illegal transition {step[0]} -> {step[1]}")


def run_scenario(config: RobotConfig, script: ScenarioScript) -> Trace:
    """
    Run a scenario to completion.

    Raises:
        ScenarioAborted: a module error stopped the run; the exception carries
            the trace up to the failing tick
    """
    dt = config.dt
    timeline = ScenarioTimeline(script)
    steps = timeline.steps(dt)
    trace = Trace(scenario=script.name, dt=dt, thresholds=config.mission.model_dump())
    logger.info(f"Running '{script.name}': {steps} steps at dt={dt:g} s")

    controller = FlightController(config.flight, config.gains)
    plant_rotors = _plant_rotors(config, script)
    plant_allocation = allocation_matrix(plant_rotors)
    rigidity_bound = hover_thrust_check(config.mass_budget).rigidity_bound
    hanging = np.zeros(4, dtype=bool)
    body = _initial_body(script)
    pneu = PneumaticState(
        p_joint=script.initial_pressures.p_joint,
        p_bottom=script.initial_pressures.p_bottom,
        events=trace.pneumatic_events,
    )
    mission = None
    if script.mission_enabled:
        mission = MissionState(config.mission, script.altitude, initial=script.initial_phase)
        mission.record('start')
    fixed_setpoint = FlightSetpoint(
        mode=script.flight_mode,
        r_des=np.array([body.r[0], body.r[1], script.altitude]),
    )

    t = 0.0
    try:
        for k in range(steps):
            t = k * dt
            if mission is not None:
                output = fsm_step(
                    mission, pneu, body, timeline.human_at(t), dt,
                    config.approach, config.pwm, timeline.deperch_requested(t),
                )
                pneu = pneu.with_command(output.command.sv1, output.command.sv2, output.pump_pwm)
                setpoint = output.setpoint
                phase, stage = mission.phase, mission.stage
            else:
                valves = script.valves
                pneu = pneu.with_command(valves.sv1, valves.sv2, valves.pump_pwm)
                setpoint = fixed_setpoint
                phase, stage = '', ''

            thrusts = controller.compute(body, setpoint, dt)
            tilts = _arm_tilts(config, thrusts, pneu.p_joint, rigidity_bound)
            if np.any((tilts > 0.0) != hanging):
                hanging = tilts > 0.0
                logger.info(f"t={t:.3f}s hanging arms: {np.flatnonzero(hanging).tolist()}")
            allocation = _drooped_allocation(plant_rotors, tilts) if hanging.any() else plant_allocation
            row = TraceRow(
                t=t, r=body.r.copy(), euler=body.euler.copy(), thrusts=thrusts.copy(),
                p_joint=pneu.p_joint, p_bottom=pneu.p_bottom, sv1=pneu.sv1, sv2=pneu.sv2,
                pump_pwm=pneu.pump_pwm, mode=pneu.flow_mode().label, phase=phase, stage=stage,
                arm_tilt=tilts,
            )
            trace.rows.append(row)

            flow = timeline.flow_at(t, config.flow)
            before = pneu
            pneu = step_pneumatics(pneu, flow, config.joint_airbag, config.bottom_airbag, dt)
            leaking = flow.leak_joint > 0.0 or flow.leak_bottom > 0.0
            _check_tick(trace, config, row, mission, before, pneu, leaking)

            force, torque = timeline.disturbance_at(t)
            was_near_hover = body.near_hover
            body = dynamics_step(body, thrusts, config.flight, dt, allocation=allocation,
                                 external_force=force, external_torque=torque)
            body = settle_on_support(body, script.support_height)
            if was_near_hover and not body.near_hover:
                trace.near_hover_excursions += 1
    except PerchSimError as e:
        logger.error(f"Scenario '{script.name}' aborted at t={t:.6g}s: {e}")
        trace.aborted = f"t={t:.6g}: {e}"
        if mission is not None:
            trace.events = list(mission.events)
        raise ScenarioAborted(f"Scenario '{script.name}' aborted at t={t:.6g}s: {e}", trace=trace, cause=e) from e

    if mission is not None:
        trace.events = list(mission.events)
        _check_events(trace, trace.events)
    if trace.violations:
        logger.warning(f"Scenario '{script.name}' finished with {len(trace.violations)} invariant violation(s)")
    else:
        logger.info(f"Scenario '{script.name}' finished cleanly after {len(trace.rows)} steps")
    return trace
