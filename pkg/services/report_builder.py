import csv
import json
import logging
import math
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from config import (
    CSV_LINE_TERMINATOR, FLIGHT_COLUMNS, OUTPUT_FILES, PRESSURE_COLUMNS, TORQUE_COLUMNS, TRACE_COLUMNS,
)
from services.arm_service import ArmGeometry, TorqueCoefficients, TorqueFit, hinge_torque, torque_prefactors
from services.pneumatics_service import DesignSolution
from services.scenario_runner import Trace, TraceRow
from utils.formatters import format_duration, format_number, format_pressure, format_roots, on_off, truncate_text

logger = logging.getLogger(__name__)

RECOVERY_BOUND = 0.05  # rad


def clean_for_json(value: Any) -> Any:
    """Recursively convert numpy types and round floats to %.6g for byte-stable JSON"""
    if isinstance(value, dict):
        return {str(k): clean_for_json(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean_for_json(v) for v in value]
    if isinstance(value, np.ndarray):
        return [clean_for_json(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        if math.isnan(value) or math.isinf(value):
            return None
        return float(format_number(float(value)))
    return value


def dumps_json(payload: Dict) -> str:
    return json.dumps(clean_for_json(payload), indent=2, sort_keys=True) + '\n'


def write_json(path: str, payload: Dict) -> None:
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(dumps_json(payload))
    logger.info(f"Wrote {path}")


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    """Write UTF-8 CSV with LF endings and %.6g numbers; returns the row count"""
    count = 0
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator=CSV_LINE_TERMINATOR)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_number(v) if isinstance(v, (float, np.floating)) else v for v in row])
            count += 1
    logger.info(f"Wrote {count} rows to {path}")
    return count


def render_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    lines = [','.join(header)]
    for row in rows:
        lines.append(','.join(format_number(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    return CSV_LINE_TERMINATOR.join(lines) + CSV_LINE_TERMINATOR


def _pressure_row(row: TraceRow) -> List[Any]:
    return [row.t, row.p_joint, row.p_bottom, on_off(row.sv1), on_off(row.sv2), row.pump_pwm, row.mode]


def _flight_row(row: TraceRow) -> List[Any]:
    return [row.t, *map(float, row.r), *map(float, row.euler), *map(float, row.thrusts)]


def _trace_row(row: TraceRow) -> List[Any]:
    return _flight_row(row) + _pressure_row(row)[1:] + [row.phase, row.stage]


class ReportBuilder:
    """Builds reports and output files for the CLI"""

    @staticmethod
    def build_design_report(target: float, solution: DesignSolution, forward_check: float,
                            model: str) -> Dict[str, Any]:
        """Machine-readable design-pressure result"""
        return {
            'target_p1_kpa': target,
            'model': model,
            'roots_kpa': list(solution.all_roots),
            'valid_root_kpa': solution.valid_root,
            'forward_check_p1_kpa': forward_check,
            'forward_error_kpa': forward_check - target,
        }

    @staticmethod
    def format_design_report(report: Dict[str, Any]) -> str:
        """Human-readable design-pressure result"""
        lines = [
            '=== BOTTOM PRE-CHARGE DESIGN ===',
            f"Target equalized pressure P1: {format_pressure(report['target_p1_kpa'])}",
            f"Relation: {report['model']}",
            f"All real roots (P0): {format_roots(report['roots_kpa'])}",
            f"Valid pre-charge P0: {format_pressure(report['valid_root_kpa'])}",
            f"Forward check P1: {format_pressure(report['forward_check_p1_kpa'])}"
            f" (error {format_number(report['forward_error_kpa'])} kPa)",
        ]
        return '\n'.join(lines) + '\n'

    @staticmethod
    def build_torque_table(p_values: Sequence[float], theta_values: Sequence[float],
                           geom: ArmGeometry, coeffs: TorqueCoefficients) -> List[List[float]]:
        """Torque grid rows ordered by angle, then pressure"""
        return [
            [theta, p0, hinge_torque(theta, p0, geom, coeffs)]
            for theta in theta_values
            for p0 in p_values
        ]

    @staticmethod
    def build_prefactor_report(geom: ArmGeometry) -> Dict[str, float]:
        area, moment = torque_prefactors(geom)
        return {'pressure_prefactor': area, 'gradient_prefactor': moment}

    @staticmethod
    def build_fit_report(fit: TorqueFit, samples: int) -> Dict[str, Any]:
        return {
            'k0': fit.coefficients.k0,
            'k1': fit.coefficients.k1,
            'k2': fit.coefficients.k2,
            'rms_nm': fit.rms,
            'max_abs_residual_nm': float(np.max(np.abs(fit.residuals))) if len(fit.residuals) else 0.0,
            'samples': samples,
        }

    @staticmethod
    def build_summary(trace: Trace) -> Dict[str, Any]:
        """Milestones, phase timeline and invariant status of a finished run"""
        rows = trace.rows
        thresholds = trace.thresholds or {}
        summary: Dict[str, Any] = {
            'scenario': trace.scenario,
            'dt': trace.dt,
            'steps': len(rows),
            'duration_s': len(rows) * trace.dt,
            'final_phase': rows[-1].phase if rows else None,
            'invariants_ok': trace.invariants_ok,
            'violations': list(trace.violations[:20]),
            'violation_count': len(trace.violations),
            'aborted': trace.aborted,
            'near_hover_excursions': trace.near_hover_excursions,
            'clamp_events': len(trace.pneumatic_events),
        }

        summary['phase_timeline'] = [
            {'t': e['t'], 'phase': e['phase'], 'stage': e['stage']}
            for e in trace.events if e['kind'] in ('start', 'phase', 'stage')
        ]
        summary['pressure_milestones'] = [
            {'t': e['t'], 'phase': e['phase'], 'stage': e['stage'],
             'p_joint': e['p_joint'], 'p_bottom': e['p_bottom']}
            for e in trace.events if e['kind'] in ('phase', 'stage')
        ]

        joint_milestones = []
        for label, key in (('rigidity', 'p_joint_rigidity'), ('full', 'p_joint_max')):
            level = thresholds.get(key)
            if level is None:
                continue
            hit = next((r for r in rows if r.p_joint >= level), None)
            joint_milestones.append({
                'label': label,
                'threshold_kpa': level,
                't': hit.t if hit else None,
                'p_joint': hit.p_joint if hit else None,
                'p_bottom': hit.p_bottom if hit else None,
            })
        summary['joint_pressure_milestones'] = joint_milestones

        perch = next((e for e in trace.events if e['kind'] == 'phase' and e['phase'] == 'Perch'), None)
        summary['propeller_stop_t'] = perch['t'] if perch else None

        attitude_error = [max(abs(float(r.euler[0])), abs(float(r.euler[1]))) for r in rows]
        summary['max_attitude_error_rad'] = max(attitude_error) if attitude_error else 0.0
        summary['recovery_time_s'] = ReportBuilder._recovery_time(rows, attitude_error)
        summary['max_arm_tilt_rad'] = max((float(np.max(r.arm_tilt)) for r in rows), default=0.0)
        summary['arm_hanging_s'] = sum(trace.dt for r in rows if np.any(r.arm_tilt > 0.0))

        summary['hold_command_energy'] = sum(
            (r.pump_pwm + float(r.sv1) + float(r.sv2)) * trace.dt
            for r in rows if r.phase == 'Perch' and r.stage == 'hold'
        )
        if rows:
            summary['final_pressures'] = {'p_joint': rows[-1].p_joint, 'p_bottom': rows[-1].p_bottom}
        return summary

    @staticmethod
    def _recovery_time(rows: Sequence[TraceRow], attitude_error: Sequence[float]) -> Optional[float]:
        """First time after which roll and pitch stay inside the recovery bound"""
        recovered = None
        for row, error in zip(rows, attitude_error):
            if error >= RECOVERY_BOUND:
                recovered = None
            elif recovered is None:
                recovered = row.t
        return recovered

    @staticmethod
    def format_summary(summary: Dict[str, Any]) -> str:
        """Short text report of a scenario summary"""
        lines = [
            f"=== SCENARIO: {summary['scenario']} ===",
            f"Steps: {summary['steps']} (dt {format_number(summary['dt'])} s)",
            f"Final phase: {summary['final_phase'] or 'n/a'}",
            f"Max attitude error: {format_number(summary['max_attitude_error_rad'])} rad",
            f"Recovered: {format_duration(summary['recovery_time_s'])}",
            f"Max arm droop: {format_number(summary['max_arm_tilt_rad'])} rad",
        ]
        for milestone in summary['joint_pressure_milestones']:
            lines.append(
                f"Joint {milestone['label']} ({format_pressure(milestone['threshold_kpa'])}): "
                f"{format_duration(milestone['t'])}"
            )
        for entry in summary['pressure_milestones']:
            lines.append(
                f"  {format_duration(entry['t'])} {entry['phase']}/{entry['stage']}: "
                f"J {format_pressure(entry['p_joint'])}, B {format_pressure(entry['p_bottom'])}"
            )
        status = 'OK' if summary['invariants_ok'] else f"{summary['violation_count']} violation(s)"
        lines.append(f"Invariants: {status}")
        for violation in summary['violations'][:5]:
            lines.append(f"  - {truncate_text(violation, 100)}")
        return '\n'.join(lines) + '\n'

    @staticmethod
    def write_trace_files(trace: Trace, out_dir: str) -> Dict[str, str]:
        """Write pressure, flight and merged traces plus the JSON summary"""
        os.makedirs(out_dir, exist_ok=True)
        paths = {name: os.path.join(out_dir, OUTPUT_FILES[name])
                 for name in ('pressure', 'flight', 'trace', 'summary')}
        write_csv(paths['pressure'], PRESSURE_COLUMNS, (_pressure_row(r) for r in trace.rows))
        write_csv(paths['flight'], FLIGHT_COLUMNS, (_flight_row(r) for r in trace.rows))
        write_csv(paths['trace'], TRACE_COLUMNS, (_trace_row(r) for r in trace.rows))
        write_json(paths['summary'], ReportBuilder.build_summary(trace))
        return paths

    @staticmethod
    def write_torque_table(path: str, rows: Sequence[Sequence[float]]) -> None:
        write_csv(path, TORQUE_COLUMNS, rows)
