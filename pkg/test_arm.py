#!/usr/bin/env python3
"""Unit tests for hinge torque, coefficient fitting and the rigid-arm checks"""
import math
import os
import sys
import unittest
from pathlib import Path

import numpy as np
from pydantic import ValidationError
from scipy.integrate import quad

# Add project root to path
PROJECT_ROOT = Path(__file__).parent
sys.path.insert(0, str(PROJECT_ROOT))

from services.arm_service import (
    ArmGeometry, MassBudget, TorqueCoefficients, arm_configuration, droop_angle, fit_torque_coefficients,
    hinge_torque, hover_thrust_check, pressure_distribution, torque_prefactors,
)
from services.config_service import ConfigService
from utils.errors import DomainError, FitError

CONFIG_PATH = os.path.join(PROJECT_ROOT, 'data', 'robot_config.json')

COEFFS = TorqueCoefficients(k0=0.2206, k1=0.1745, k2=-1.457)
ANGLES = [0.0, math.pi / 9, math.pi / 6, 2 * math.pi / 9, math.pi / 3]
PRESSURES = [float(p) for p in range(0, 80, 10)]


class TestHingeTorque(unittest.TestCase):
    def setUp(self):
        self.geom = ArmGeometry()

    def test_prefactors(self):
        area, moment = torque_prefactors(self.geom)
        self.assertAlmostEqual(area / 3.888e-6, 1.0, delta=0.005)
        self.assertAlmostEqual(moment / 5.054e-8, 1.0, delta=0.005)

    def test_zero_angle_zero_pressure(self):
        self.assertEqual(hinge_torque(0.0, 0.0, self.geom, COEFFS), 0.0)

    def test_straight_arm_torque(self):
        self.assertAlmostEqual(hinge_torque(0.0, 40.0, self.geom, COEFFS), 3.431e-5, delta=1e-8)

    def test_matches_quadrature(self):
        for theta in ANGLES:
            for p0 in (10.0, 40.0, 70.0):
                oracle, _ = quad(
                    lambda y: pressure_distribution(y, theta, p0, COEFFS) * self.geom.l_link * y,
                    self.geom.y0, self.geom.y1,
                )
                got = hinge_torque(theta, p0, self.geom, COEFFS)
                self.assertAlmostEqual(got, oracle, delta=1e-12 + 1e-9 * abs(oracle))

    def test_torque_falls_with_opening(self):
        torques = [hinge_torque(theta, 40.0, self.geom, COEFFS) for theta in ANGLES]
        for wider, narrower in zip(torques[1:], torques):
            self.assertLess(wider, narrower)

    def test_rejects_out_of_range_inputs(self):
        with self.assertRaises(DomainError):
            hinge_torque(-0.1, 40.0, self.geom, COEFFS)
        with self.assertRaises(DomainError):
            hinge_torque(0.1, -5.0, self.geom, COEFFS)

    def test_geometry_validation(self):
        with self.assertRaises(ValidationError):
            ArmGeometry(y0=0.02, y1=0.018)
        with self.assertRaises(ValidationError):
            ArmGeometry(hinge_limits=[2.0, 2.0])


class TestTorqueFit(unittest.TestCase):
    def setUp(self):
        self.geom = ArmGeometry()

    def _samples(self, noise=0.0, seed=7):
        rng = np.random.default_rng(seed)
        samples = []
        for theta in ANGLES:
            for p0 in PRESSURES:
                if theta == 0.0 and p0 == 0.0:
                    continue
                torque = hinge_torque(theta, p0, self.geom, COEFFS)
                if noise:
                    torque *= 1.0 + noise * rng.standard_normal()
                samples.append((theta, p0, torque))
        return samples

    def test_noiseless_recovery(self):
        fit = fit_torque_coefficients(self._samples(), self.geom)
        self.assertLess(fit.rms, 1e-10)
        self.assertAlmostEqual(fit.coefficients.k0, COEFFS.k0, places=6)
        self.assertAlmostEqual(fit.coefficients.k1, COEFFS.k1, places=6)
        self.assertAlmostEqual(fit.coefficients.k2, COEFFS.k2, places=4)

    def test_noisy_relative_recovery(self):
        fit = fit_torque_coefficients(self._samples(noise=0.01), self.geom, relative=True)
        for got, expected in ((fit.coefficients.k0, COEFFS.k0), (fit.coefficients.k1, COEFFS.k1),
                              (fit.coefficients.k2, COEFFS.k2)):
            self.assertAlmostEqual(got / expected, 1.0, delta=0.05)

    def test_too_few_samples(self):
        with self.assertRaises(FitError):
            fit_torque_coefficients(self._samples()[:2], self.geom)

    def test_single_angle_is_underdetermined(self):
        samples = [(math.pi / 6, p0, hinge_torque(math.pi / 6, p0, self.geom, COEFFS)) for p0 in PRESSURES]
        with self.assertRaises(FitError):
            fit_torque_coefficients(samples, self.geom)


class TestRigidArm(unittest.TestCase):
    def setUp(self):
        self.geom = ArmGeometry()
        self.budget = MassBudget(m_body=0.804, m_arm=0.124, m_rotor=0.036)

    def test_hover_thrust_and_bound(self):
        check = hover_thrust_check(self.budget)
        self.assertAlmostEqual(check.lambda_hover, 3.5414, delta=1e-3)
        self.assertAlmostEqual(check.rigidity_bound, 0.961, delta=1e-3)
        self.assertTrue(check.rigid)
        self.assertTrue(check.moment_ok)

    def test_weak_thrust_is_not_rigid(self):
        self.assertFalse(hover_thrust_check(self.budget, thrust=0.5).rigid)

    def test_zero_thrust_is_not_rigid(self):
        self.assertFalse(hover_thrust_check(self.budget, thrust=0.0).rigid)

    def test_config_thrust_floor_follows_mass_budget(self):
        service = ConfigService(CONFIG_PATH)
        self.assertNotIn('lambda_min', service.raw['flight'])
        self.assertAlmostEqual(service.robot.flight.lambda_min,
                               hover_thrust_check(service.robot.mass_budget).rigidity_bound, places=12)
        heavier = dict(service.raw, mass_budget=dict(service.raw['mass_budget'], m_rotor=0.05))
        robot = ConfigService.parse_robot(heavier)
        self.assertAlmostEqual(robot.flight.lambda_min, 0.124 * robot.mass_budget.g / 2 + 0.05 * robot.mass_budget.g,
                               places=12)
        pinned = dict(service.raw, flight=dict(service.raw['flight'], lambda_min=0.5))
        self.assertEqual(ConfigService.parse_robot(pinned).flight.lambda_min, 0.5)

    def test_equilibrium_angle(self):
        load = hinge_torque(0.5, 40.0, self.geom, COEFFS)
        angles = arm_configuration([40.0] * 3, [load] * 3, self.geom, COEFFS)
        for angle in angles:
            self.assertAlmostEqual(angle, 0.5, delta=1e-9)

    def test_unpressurized_arm_folds(self):
        angles = arm_configuration([0.0] * 3, [1e-4] * 3, self.geom, COEFFS)
        self.assertEqual(angles, [0.0, 0.0, 0.0])

    def test_unloaded_arm_opens_to_limits(self):
        angles = arm_configuration([40.0] * 3, [0.0] * 3, self.geom, COEFFS)
        self.assertEqual(angles, list(self.geom.hinge_limits))

    def test_mismatched_lengths(self):
        with self.assertRaises(DomainError):
            arm_configuration([40.0], [0.0, 0.0], self.geom, COEFFS)

    def test_thrust_above_bound_keeps_arm_straight(self):
        bound = hover_thrust_check(self.budget).rigidity_bound
        self.assertEqual(droop_angle(bound, 0.0, bound, 19.0, self.geom, COEFFS), 0.0)

    def test_rigidity_pressure_keeps_arm_straight(self):
        bound = hover_thrust_check(self.budget).rigidity_bound
        self.assertEqual(droop_angle(0.0, 19.0, bound, 19.0, self.geom, COEFFS), 0.0)

    def test_unsupported_arm_hangs(self):
        bound = hover_thrust_check(self.budget).rigidity_bound
        self.assertAlmostEqual(droop_angle(0.0, 0.0, bound, 19.0, self.geom, COEFFS), math.pi / 2, places=12)

    def test_pressure_reduces_droop(self):
        bound = hover_thrust_check(self.budget).rigidity_bound
        thrust = bound - 5e-5
        slack = droop_angle(thrust, 0.0, bound, 19.0, self.geom, COEFFS)
        held = droop_angle(thrust, 18.0, bound, 19.0, self.geom, COEFFS)
        self.assertGreater(held, 0.0)
        self.assertLess(held, slack)


if __name__ == "__main__":
    unittest.main()
