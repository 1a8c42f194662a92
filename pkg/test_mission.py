#!/usr/bin/env python3
"""Tests for the mission FSM, approach law and end-to-end scenarios"""
import os
import random
import sys
import unittest
from pathlib import Path

import numpy as np
from pydantic import ValidationError

# Add project root to path
PROJECT_ROOT = Path(__file__).parent
sys.path.insert(0, str(PROJECT_ROOT))

from config import PHASES
from services.arm_service import hover_thrust_check
from services.config_service import ConfigService
from services.flight_dynamics import RigidBodyState
from services.mission_service import (
    COMMAND_TABLE, ENTRY_STAGE, TRANSITIONS, ApproachGains, HumanSample, MissionState, MissionThresholds,
    PumpMode, approach_velocity, fsm_step,
)
from services.pneumatic_plant import PneumaticState, PwmParams
from services.pneumatics_service import equalized_pressure_forward
from services.report_builder import ReportBuilder
from services.scenario_runner import run_scenario

CONFIG_PATH = os.path.join(PROJECT_ROOT, 'data', 'robot_config.json')
SCENARIO_DIR = os.path.join(PROJECT_ROOT, 'data', 'scenarios')
LEGAL = {(t['source'], t['dest']) for t in TRANSITIONS}

# (pump, SV1, SV2) rows of the solenoid valve and pump state table
PUBLISHED_COMMANDS = {
    (PumpMode.NEEDED, True, True),
    (PumpMode.ON, True, True),
    (PumpMode.OFF, False, False),
    (PumpMode.MAXIMUM, False, False),
    (PumpMode.OFF, False, True),
}


def run_bundled(name):
    service = ConfigService(CONFIG_PATH)
    script = service.load_scenario(os.path.join(SCENARIO_DIR, f'{name}.json'))
    robot = service.resolve(script)
    return robot, run_scenario(robot, script)


class TestApproachVelocity(unittest.TestCase):
    def setUp(self):
        self.thresholds = MissionThresholds()
        self.gains = ApproachGains()

    def test_proportional_speed(self):
        v, d = approach_velocity(HumanSample(distance=2.0), None, self.thresholds, self.gains, 0.01)
        self.assertAlmostEqual(v, 0.75, places=12)
        self.assertEqual(d, 2.0)

    def test_speed_is_clamped(self):
        v, _ = approach_velocity(HumanSample(distance=10.0), None, self.thresholds, self.gains, 0.01)
        self.assertEqual(v, self.gains.v_max)

    def test_dropout_stops(self):
        v, d = approach_velocity(HumanSample(dropout=True, distance=2.0), 1.8, self.thresholds, self.gains, 0.01)
        self.assertEqual(v, 0.0)
        self.assertEqual(d, 1.8)

    def test_flagged_outlier_reuses_previous_distance(self):
        v, d = approach_velocity(HumanSample(distance=0.3, outlier=True), 1.2, self.thresholds, self.gains, 0.01)
        self.assertEqual(d, 1.2)
        self.assertAlmostEqual(v, 0.35, places=12)

    def test_jump_is_treated_as_outlier(self):
        _, d = approach_velocity(HumanSample(distance=3.0), 1.0, self.thresholds, self.gains, 0.01)
        self.assertEqual(d, 1.0)

    def test_at_goal_holds(self):
        v, _ = approach_velocity(HumanSample(distance=0.5), 0.5, self.thresholds, self.gains, 0.01)
        self.assertEqual(v, 0.0)


class TestCommandTable(unittest.TestCase):
    def test_every_phase_has_an_entry_row(self):
        for phase in PHASES:
            self.assertIn((phase, ENTRY_STAGE[phase]), COMMAND_TABLE)

    def test_hold_draws_nothing(self):
        command = COMMAND_TABLE[('Perch', 'hold')]
        self.assertEqual(command.pump, PumpMode.OFF)
        self.assertFalse(command.sv1)
        self.assertFalse(command.sv2)

    def test_published_rows(self):
        self.assertEqual(COMMAND_TABLE[('Approach', 'pre_inflate')][:3], (PumpMode.NEEDED, True, True))
        self.assertEqual(COMMAND_TABLE[('Reach', 'charge')][:3], (PumpMode.ON, True, True))
        self.assertEqual(COMMAND_TABLE[('Reach', 'transfer')][:3], (PumpMode.OFF, False, False))
        self.assertEqual(COMMAND_TABLE[('Perch', 'fill')][:3], (PumpMode.MAXIMUM, False, False))
        self.assertEqual(COMMAND_TABLE[('Deperch', 'exhaust')][:3], (PumpMode.OFF, False, True))

    def test_every_row_is_a_published_command(self):
        for key, command in COMMAND_TABLE.items():
            self.assertIn(command[:3], PUBLISHED_COMMANDS, key)

    def test_pump_assist_reuses_the_fill_row(self):
        self.assertEqual(COMMAND_TABLE[('Reach', 'transfer_assist')][:3], COMMAND_TABLE[('Perch', 'fill')][:3])

    def test_thresholds_validation(self):
        with self.assertRaises(ValidationError):
            MissionThresholds(p_joint_rigidity=60.0)


class TestMissionFsm(unittest.TestCase):
    def setUp(self):
        self.thresholds = MissionThresholds()
        self.gains = ApproachGains()
        self.pwm = PwmParams()
        self.body = RigidBodyState.at([0.0, 0.0, 1.5])

    def _step(self, mission, pneu, human=None, deperch=False, body=None):
        return fsm_step(mission, pneu, body or self.body, human or HumanSample(), 0.01,
                        self.gains, self.pwm, deperch)

    def test_search_waits_for_a_person(self):
        mission = MissionState(self.thresholds, 1.5)
        output = self._step(mission, PneumaticState())
        self.assertEqual(mission.phase, 'Search')
        self.assertEqual(output.pump_pwm, 0.0)
        self._step(mission, PneumaticState(), HumanSample(distance=2.0))
        self.assertEqual(mission.phase, 'Approach')
        self.assertEqual(mission.stage, 'pre_inflate')

    def test_reach_needs_a_presented_arm(self):
        mission = MissionState(self.thresholds, 1.5, initial='Approach')
        self._step(mission, PneumaticState(), HumanSample(distance=0.4))
        self.assertEqual(mission.phase, 'Approach')
        self._step(mission, PneumaticState(), HumanSample(distance=0.4, arm_presented=True))
        self.assertEqual(mission.phase, 'Reach')
        self.assertEqual(mission.stage, 'charge')

    def test_reach_charge_then_transfer_then_perch(self):
        mission = MissionState(self.thresholds, 1.5, initial='Reach')
        output = self._step(mission, PneumaticState(p_bottom=10.0))
        self.assertEqual(mission.stage, 'charge')
        self.assertGreater(output.pump_pwm, 0.0)
        self._step(mission, PneumaticState(p_bottom=40.0))
        self.assertEqual(mission.stage, 'transfer')
        self._step(mission, PneumaticState(p_joint=19.5, p_bottom=20.5))
        self.assertEqual(mission.phase, 'Perch')
        self.assertEqual(mission.stage, 'fill')

    def test_transfer_falls_back_to_pump(self):
        mission = MissionState(self.thresholds, 1.5, initial='Reach')
        self._step(mission, PneumaticState(p_bottom=40.0))
        for _ in range(200):
            self._step(mission, PneumaticState(p_joint=18.8, p_bottom=18.8))
        self.assertEqual(mission.stage, 'transfer_assist')

    def test_perch_stops_propellers(self):
        mission = MissionState(self.thresholds, 1.5, initial='Perch')
        output = self._step(mission, PneumaticState(p_joint=30.0, p_bottom=20.0))
        self.assertEqual(output.setpoint.mode, 'off')
        self.assertEqual(output.pump_pwm, 1.0)

    def test_leaky_hold_stays_off_above_refill(self):
        mission = MissionState(self.thresholds, 1.5, initial='Perch')
        self._step(mission, PneumaticState(p_joint=50.0, p_bottom=20.0))
        self.assertEqual(mission.stage, 'hold')
        output = self._step(mission, PneumaticState(p_joint=45.0, p_bottom=20.0))
        self.assertEqual(mission.stage, 'hold')
        self.assertEqual(output.pump_pwm, 0.0)
        self.assertFalse(output.command.sv1 or output.command.sv2)

    def test_hold_refills_below_threshold(self):
        mission = MissionState(self.thresholds, 1.5, initial='Perch')
        self._step(mission, PneumaticState(p_joint=50.0, p_bottom=20.0))
        self._step(mission, PneumaticState(p_joint=39.0, p_bottom=20.0))
        self.assertEqual(mission.stage, 'fill')

    def test_low_bottom_tops_up_joints_through_fill(self):
        mission = MissionState(self.thresholds, 1.5, initial='Perch')
        self._step(mission, PneumaticState(p_joint=50.0, p_bottom=20.0))
        self._step(mission, PneumaticState(p_joint=50.0, p_bottom=15.0))
        self.assertEqual(mission.stage, 'hold')
        output = self._step(mission, PneumaticState(p_joint=46.0, p_bottom=15.0))
        self.assertEqual(mission.stage, 'fill')
        self.assertEqual(output.command, COMMAND_TABLE[('Perch', 'fill')])
        self.assertFalse(output.command.sv1)

    def test_pump_assist_drives_joints_at_full_pwm(self):
        mission = MissionState(self.thresholds, 1.5, initial='Reach')
        self._step(mission, PneumaticState(p_bottom=40.0))
        output = None
        for _ in range(200):
            output = self._step(mission, PneumaticState(p_joint=16.5, p_bottom=16.5))
        self.assertEqual(mission.stage, 'transfer_assist')
        self.assertEqual(output.pump_pwm, 1.0)
        self.assertFalse(output.command.sv1 or output.command.sv2)

    def test_deperch_requires_hold_and_request(self):
        mission = MissionState(self.thresholds, 1.5, initial='Perch')
        self._step(mission, PneumaticState(p_joint=30.0, p_bottom=20.0), deperch=True)
        self.assertEqual(mission.phase, 'Perch')
        self._step(mission, PneumaticState(p_joint=50.0, p_bottom=20.0))
        self._step(mission, PneumaticState(p_joint=50.0, p_bottom=20.0), deperch=True)
        self.assertEqual(mission.phase, 'Deperch')
        self.assertEqual(mission.command.sv2, True)

    def test_takeoff_needs_empty_joint_and_altitude(self):
        mission = MissionState(self.thresholds, 1.5, initial='Deperch')
        low = RigidBodyState.at([0.0, 0.0, 1.39])
        self._step(mission, PneumaticState(p_joint=0.5, p_bottom=20.0), body=low)
        self.assertEqual(mission.phase, 'Deperch')
        self._step(mission, PneumaticState(p_joint=0.5, p_bottom=20.0))
        self.assertEqual(mission.phase, 'Approach')

    def test_events_record_transitions(self):
        mission = MissionState(self.thresholds, 1.5)
        self._step(mission, PneumaticState(), HumanSample(distance=2.0))
        phases = [e for e in mission.events if e['kind'] == 'phase']
        self.assertEqual(len(phases), 1)
        self.assertEqual((phases[0]['previous_phase'], phases[0]['phase']), ('Search', 'Approach'))

    def test_random_observations_keep_fsm_legal(self):
        rng = random.Random(11)
        for initial in PHASES:
            mission = MissionState(self.thresholds, 1.5, initial=initial)
            for _ in range(2000):
                pneu = PneumaticState(p_joint=rng.uniform(0.0, 60.0), p_bottom=rng.uniform(0.0, 60.0))
                human = HumanSample(
                    distance=rng.choice([None, rng.uniform(0.0, 3.0)]),
                    arm_presented=rng.random() < 0.5,
                    dropout=rng.random() < 0.1,
                    outlier=rng.random() < 0.1,
                )
                body = RigidBodyState.at([0.0, 0.0, rng.uniform(1.3, 1.7)])
                before = mission.phase
                output = self._step(mission, pneu, human, rng.random() < 0.3, body)
                if mission.phase != before:
                    self.assertIn((before, mission.phase), LEGAL)
                self.assertEqual(output.command, COMMAND_TABLE[(mission.phase, mission.stage)])
                self.assertTrue(0.0 <= output.pump_pwm <= 1.0)
                if output.command.pump == PumpMode.OFF:
                    self.assertEqual(output.pump_pwm, 0.0)


class TestScenarios(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.robot, cls.nominal = run_bundled('perch_nominal')

    def test_nominal_perch_milestones(self):
        trace = self.nominal
        summary = ReportBuilder.build_summary(trace)
        self.assertTrue(trace.invariants_ok, trace.violations[:5])

        milestones = {m['label']: m for m in summary['joint_pressure_milestones']}
        stop = summary['propeller_stop_t']
        self.assertIsNotNone(stop)
        self.assertIsNotNone(milestones['rigidity']['t'])
        self.assertLessEqual(milestones['rigidity']['t'], stop)
        self.assertIsNotNone(milestones['full']['t'])
        self.assertGreaterEqual(milestones['full']['t'], stop)
        self.assertAlmostEqual(milestones['full']['p_joint'], 50.0, delta=2.0)

        phases = [e['phase'] for e in trace.events if e['kind'] == 'phase']
        self.assertEqual(phases[:5], ['Approach', 'Reach', 'Perch', 'Deperch', 'Approach'])
        self.assertEqual(summary['hold_command_energy'], 0.0)

        hold = [r for r in trace.rows if r.phase == 'Perch' and r.stage == 'hold']
        self.assertTrue(hold)
        hold_bottom = hold[0].p_bottom
        self.assertGreaterEqual(hold_bottom, 21.0)
        self.assertLessEqual(hold_bottom, 27.0)

        last = trace.rows[-1]
        self.assertLess(last.p_joint, 1.0)
        self.assertAlmostEqual(last.p_bottom, hold_bottom, delta=0.5)

    def test_nominal_arms_stay_rigid(self):
        self.assertTrue(all(not np.any(r.arm_tilt) for r in self.nominal.rows))

    def test_emitted_commands_are_published_rows(self):
        for name in ('perch_nominal', 'perch_no_pump', 'perch_precharge_30', 'deperch'):
            trace = self.nominal if name == 'perch_nominal' else run_bundled(name)[1]
            for row in trace.rows:
                command = COMMAND_TABLE[(row.phase, row.stage)]
                self.assertIn(command[:3], PUBLISHED_COMMANDS, f"{name} t={row.t}")
                self.assertEqual((row.sv1, row.sv2), (command.sv1, command.sv2))
                if command.pump == PumpMode.OFF:
                    self.assertEqual(row.pump_pwm, 0.0)

    def test_leak_during_hold_stays_above_refill(self):
        leaking = [r for r in self.nominal.rows if 17.0 <= r.t < 26.0]
        self.assertTrue(leaking)
        self.assertTrue(all(r.stage == 'hold' for r in leaking))
        self.assertTrue(all(r.pump_pwm == 0.0 and not r.sv1 and not r.sv2 for r in leaking))
        self.assertGreater(min(r.p_joint for r in leaking), self.robot.mission.p_joint_refill)

    def test_hover_disturbance_recovers(self):
        _, trace = run_bundled('hover_disturbance')
        summary = ReportBuilder.build_summary(trace)
        self.assertTrue(trace.invariants_ok)
        self.assertIsNotNone(summary['recovery_time_s'])
        self.assertLessEqual(summary['recovery_time_s'], 3.0)
        self.assertAlmostEqual(summary['max_attitude_error_rad'], 0.5, delta=0.05)

    def test_thrust_floor_keeps_arms_rigid_in_recovery(self):
        robot, trace = run_bundled('hover_disturbance')
        bound = hover_thrust_check(robot.mass_budget).rigidity_bound
        self.assertAlmostEqual(robot.flight.lambda_min, bound, places=12)
        self.assertTrue(all(np.all(r.thrusts >= bound) for r in trace.rows))
        self.assertEqual(ReportBuilder.build_summary(trace)['max_arm_tilt_rad'], 0.0)

    def test_weak_rotors_let_their_arms_hang(self):
        robot, trace = run_bundled('hover_arm_droop')
        self.assertEqual(robot.flight.lambda_min, 0.0)
        bound = hover_thrust_check(robot.mass_budget).rigidity_bound
        drooped = [r for r in trace.rows if np.any(r.arm_tilt > 0.0)]
        self.assertTrue(drooped)
        for row in drooped:
            hanging = row.arm_tilt > 0.0
            self.assertTrue(np.all(row.thrusts[hanging] < bound))
            self.assertTrue(np.all(row.arm_tilt <= np.pi / 2))
        self.assertFalse(np.any(trace.rows[-1].arm_tilt))
        summary = ReportBuilder.build_summary(trace)
        self.assertGreater(summary['max_arm_tilt_rad'], 0.0)
        self.assertGreater(summary['arm_hanging_s'], 0.0)

    def test_deperch_drains_joint_and_keeps_bottom(self):
        _, trace = run_bundled('deperch')
        self.assertTrue(trace.invariants_ok, trace.violations[:5])
        phases = [e['phase'] for e in trace.events if e['kind'] == 'phase']
        self.assertEqual(phases, ['Deperch', 'Approach'])
        last = trace.rows[-1]
        self.assertLess(last.p_joint, 1.0)
        self.assertAlmostEqual(last.p_bottom, 20.0, delta=2.0)

    def test_transfer_without_pump_matches_equalization(self):
        robot, trace = run_bundled('perch_no_pump')
        expected = equalized_pressure_forward(38.2, robot.joint_airbag, robot.bottom_airbag)
        self.assertAlmostEqual(expected, 21.0, delta=0.2)

        perch = next(e for e in trace.events if e['kind'] == 'phase' and e['phase'] == 'Perch')
        self.assertGreaterEqual(perch['p_joint'], robot.mission.p_joint_rigidity)

        last = trace.rows[-1]
        self.assertEqual((last.phase, last.stage), ('Perch', 'fill'))
        self.assertAlmostEqual(last.p_joint, expected, delta=0.2)
        self.assertAlmostEqual(last.p_bottom, expected, delta=0.2)
        self.assertLess(max(r.p_joint for r in trace.rows), robot.mission.p_joint_max)

    def test_low_precharge_falls_back_to_pump_and_perches(self):
        robot, trace = run_bundled('perch_precharge_30')
        self.assertTrue(trace.invariants_ok, trace.violations[:5])
        self.assertLess(equalized_pressure_forward(30.0, robot.joint_airbag, robot.bottom_airbag),
                        robot.mission.p_joint_rigidity)

        stages = [e for e in trace.events if e['kind'] == 'stage']
        assist = next(e for e in stages if e['stage'] == 'transfer_assist')
        self.assertEqual(assist['phase'], 'Reach')
        self.assertLess(assist['p_joint'], robot.mission.p_joint_rigidity)
        transfer = next(e for e in stages if e['stage'] == 'transfer')
        self.assertAlmostEqual(assist['t'] - transfer['t'], robot.mission.pump_fallback_delay, delta=0.01)

        phases = [e['phase'] for e in trace.events if e['kind'] == 'phase']
        self.assertEqual(phases, ['Perch'])
        perch = next(e for e in trace.events if e['kind'] == 'phase')
        self.assertGreater(perch['t'], assist['t'])
        self.assertEqual(trace.rows[-1].stage, 'hold')

    def test_empty_scenario(self):
        _, trace = run_bundled('empty')
        self.assertEqual(trace.rows, [])
        self.assertTrue(trace.invariants_ok)

    def test_runs_are_deterministic(self):
        _, first = run_bundled('deperch')
        _, second = run_bundled('deperch')
        self.assertEqual(len(first.rows), len(second.rows))
        for a, b in zip(first.rows, second.rows):
            self.assertEqual((a.p_joint, a.p_bottom, a.phase), (b.p_joint, b.p_bottom, b.phase))
            np.testing.assert_array_equal(a.r, b.r)


if __name__ == "__main__":
    unittest.main()
