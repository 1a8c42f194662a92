import argparse
import csv
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence, Tuple

from config import (
    BATCH_WORKERS, EXIT_CODES, LOG_FILE, LOG_FORMAT, LOG_LEVEL, OUTPUT_DIR, OUTPUT_FILES,
    ROBOT_CONFIG_PATH, SCENARIO_DIR, TORQUE_COLUMNS,
)
from services.arm_service import fit_torque_coefficients
from services.config_service import ConfigService
from services.pneumatics_service import EQUALIZATION_MODELS, equalized_pressure_forward, initial_pressure_for_target
from services.report_builder import ReportBuilder, dumps_json, render_csv, write_json
from services.scenario_runner import run_scenario
from services.valve_service import render_truth_tables
from utils.errors import ConfigError, DesignInfeasibleError, FitError, PerchSimError, ScenarioAborted

logger = logging.getLogger('perch_sim')

TORQUE_PRESSURES = [float(p) for p in range(0, 80, 10)]
TORQUE_ANGLES = [0.0, math.pi / 9, math.pi / 6, 2 * math.pi / 9, math.pi / 3]


def setup_logging(level: str = LOG_LEVEL) -> None:
    """Log to stderr; stdout carries reports only"""
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT,
                        handlers=[logging.StreamHandler(sys.stderr)], force=True)


def attach_log_file(out_dir: str, log_file: Optional[str] = LOG_FILE) -> Optional[str]:
    """Also log to log_file inside the output directory; returns the path or None"""
    if not log_file:
        return None
    path = os.path.join(out_dir, log_file)
    root = logging.getLogger()
    for handler in [h for h in root.handlers if isinstance(h, logging.FileHandler)]:
        root.removeHandler(handler)
        handler.close()
    try:
        os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
        handler = logging.FileHandler(path, encoding='utf-8')
    except OSError as e:
        logger.warning(f"Cannot write log file {path}: {e}")
        return None
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    return path


def _positive_dt(value: str) -> float:
    try:
        dt = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"dt must be a number, got '{value}'")
    if not 0.0 < dt <= 0.01:
        raise argparse.ArgumentTypeError(f"dt must lie in (0, 0.01] s, got {value}")
    return dt


def _float_list(value: str) -> List[float]:
    try:
        items = [float(x) for x in value.split(',') if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{value}'")
    if not items:
        raise argparse.ArgumentTypeError('range must not be empty')
    return items


def _common_options(parser: argparse.ArgumentParser, defaults: bool) -> None:
    # subcommands repeat the options without defaults so a value given before the subcommand survives
    def default(value):
        return value if defaults else argparse.SUPPRESS

    parser.add_argument('--config', default=default(ROBOT_CONFIG_PATH), help='robot configuration JSON')
    parser.add_argument('--out', default=default(OUTPUT_DIR), help='output directory for written files')
    parser.add_argument('--dt', type=_positive_dt, default=default(None), help='integration step override [s]')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='perch_sim',
        description='Pneumatic perching quadrotor: design calculators and scenario simulation',
    )
    _common_options(parser, defaults=True)
    common = argparse.ArgumentParser(add_help=False)
    _common_options(common, defaults=False)
    sub = parser.add_subparsers(dest='command', required=True)

    design = sub.add_parser('design-pressure', parents=[common], help='bottom pre-charge for a target joint pressure')
    design.add_argument('--target', type=float, default=21.0, help='target equalized pressure [kPa]')
    design.add_argument('--model', choices=EQUALIZATION_MODELS, default='design')
    design.add_argument('--json', action='store_true', help='print JSON instead of text')

    sub.add_parser('truth-tables', parents=[common], help='print every valve-logic cell')

    simulate = sub.add_parser('simulate', parents=[common], help='run one or more scenario scripts')
    simulate.add_argument('--scenario', action='append', required=True,
                          help=f'scenario JSON; repeatable (bundled ones live in {SCENARIO_DIR})')
    simulate.add_argument('--workers', type=int, default=BATCH_WORKERS,
                          help='parallel worker processes for several scenarios')

    torque = sub.add_parser('torque-table', parents=[common], help='hinge torque over a pressure and angle grid')
    torque.add_argument('--pressures', type=_float_list, default=TORQUE_PRESSURES, help='kPa, comma separated')
    torque.add_argument('--angles', type=_float_list, default=TORQUE_ANGLES, help='rad, comma separated')

    fit = sub.add_parser('fit-torque', parents=[common], help='fit torque coefficients to measured samples')
    fit.add_argument('--samples', required=True, help='CSV with theta_rad,p0_kpa,torque_nm columns')
    fit.add_argument('--relative', action='store_true', help='weight residuals by 1/|torque|')
    return parser


def cmd_design_pressure(args, service: ConfigService) -> int:
    robot = service.with_dt(args.dt)
    solution = initial_pressure_for_target(args.target, robot.joint_airbag, robot.bottom_airbag, model=args.model)
    forward = equalized_pressure_forward(solution.valid_root, robot.joint_airbag, robot.bottom_airbag,
                                         model=args.model)
    report = ReportBuilder.build_design_report(args.target, solution, forward, args.model)
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, OUTPUT_FILES['design']), report)
    sys.stdout.write(dumps_json(report) if args.json else ReportBuilder.format_design_report(report))
    return EXIT_CODES['ok']


def cmd_truth_tables(args) -> int:
    sys.stdout.write(render_truth_tables())
    return EXIT_CODES['ok']


def _scenario_out_dir(out: str, name: str, batch: bool) -> str:
    return os.path.join(out, name) if batch else out


def simulate_one(config_path: str, scenario_path: str, dt: Optional[float], out_dir: str,
                 batch: bool) -> Tuple[str, int, str]:
    """Run and export one scenario; module-level so worker processes can pickle it"""
    try:
        service = ConfigService(config_path)
        script = service.load_scenario(scenario_path)
        robot = service.resolve(script, dt)
    except ConfigError as e:
        return scenario_path, EXIT_CODES['config_error'], f"config error: {e}"

    target = _scenario_out_dir(out_dir, script.name, batch)
    try:
        trace = run_scenario(robot, script)
    except ScenarioAborted as e:
        if e.trace is not None:
            ReportBuilder.write_trace_files(e.trace, target)
        return script.name, EXIT_CODES['invariant_violation'], str(e)

    ReportBuilder.write_trace_files(trace, target)
    summary = ReportBuilder.build_summary(trace)
    text = ReportBuilder.format_summary(summary)
    code = EXIT_CODES['ok'] if trace.invariants_ok else EXIT_CODES['invariant_violation']
    return script.name, code, text


def cmd_simulate(args) -> int:
    scenarios = args.scenario
    batch = len(scenarios) > 1
    jobs = [(args.config, path, args.dt, args.out, batch) for path in scenarios]
    workers = max(1, min(args.workers, len(jobs)))

    if workers == 1:
        results = [simulate_one(*job) for job in jobs]
    else:
        logger.info(f"Running {len(jobs)} scenarios on {workers} workers")
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(simulate_one, *zip(*jobs)))

    worst = EXIT_CODES['ok']
    for name, code, text in results:
        if code == EXIT_CODES['ok']:
            sys.stdout.write(text)
        else:
            logger.error(f"{name}: {text.strip()}")
            if code == EXIT_CODES['invariant_violation']:
                sys.stdout.write(text if text.endswith('\n') else text + '\n')
        worst = max(worst, code)
    return worst


def cmd_torque_table(args, service: ConfigService) -> int:
    robot = service.robot
    rows = ReportBuilder.build_torque_table(args.pressures, args.angles, robot.arm, robot.torque_coefficients)
    os.makedirs(args.out, exist_ok=True)
    ReportBuilder.write_torque_table(os.path.join(args.out, OUTPUT_FILES['torque']), rows)
    prefactors = ReportBuilder.build_prefactor_report(robot.arm)
    logger.info(f"Prefactors: {prefactors['pressure_prefactor']:.4g}, {prefactors['gradient_prefactor']:.4g}")
    sys.stdout.write(render_csv(TORQUE_COLUMNS, rows))
    return EXIT_CODES['ok']


def read_torque_samples(path: str) -> List[Tuple[float, float, float]]:
    """Read (theta, p0, torque) samples from a CSV file with a header row"""
    if not os.path.exists(path):
        raise ConfigError(f"file not found: {path}", field='samples')
    samples = []
    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.DictReader(f)
        missing = set(TORQUE_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ConfigError(f"missing column(s) {', '.join(sorted(missing))}", field=path)
        for line, row in enumerate(reader, start=2):
            try:
                samples.append((float(row['theta_rad']), float(row['p0_kpa']), float(row['torque_nm'])))
            except (TypeError, ValueError):
                raise ConfigError(f"line {line}: non-numeric value", field=path)
    return samples


def cmd_fit_torque(args, service: ConfigService) -> int:
    samples = read_torque_samples(args.samples)
    fit = fit_torque_coefficients(samples, service.robot.arm, relative=args.relative)
    report = ReportBuilder.build_fit_report(fit, len(samples))
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, OUTPUT_FILES['fit']), report)
    sys.stdout.write(dumps_json(report))
    return EXIT_CODES['ok']


def run(argv: Optional[Sequence[str]] = None, log_file: Optional[str] = None) -> int:
    args = build_parser().parse_args(argv)
    if log_file:
        attach_log_file(args.out, log_file)
    try:
        if args.command == 'truth-tables':
            return cmd_truth_tables(args)
        if args.command == 'simulate':
            return cmd_simulate(args)
        service = ConfigService(args.config)
        if args.command == 'design-pressure':
            return cmd_design_pressure(args, service)
        if args.command == 'torque-table':
            return cmd_torque_table(args, service)
        return cmd_fit_torque(args, service)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        sys.stderr.write(f"error: {e}\n")
        return EXIT_CODES['config_error']
    except DesignInfeasibleError as e:
        logger.error(f"Infeasible design: {e}")
        sys.stderr.write(f"error: {e}\n")
        return EXIT_CODES['infeasible_design']
    except FitError as e:
        logger.error(f"Torque fit failed: {e}")
        sys.stderr.write(f"error: {e}\n")
        return EXIT_CODES['config_error']
    except PerchSimError as e:
        logger.error(f"{args.command} failed: {e}")
        sys.stderr.write(f"error: {e}\n")
        return EXIT_CODES['invariant_violation']
    except Exception as e:
        logger.exception(f"Unexpected error in {args.command}: {e}")
        return EXIT_CODES['unexpected']


def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logging()
    return run(argv, log_file=LOG_FILE)


if __name__ == "__main__":
    sys.exit(main())
