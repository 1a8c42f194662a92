import os
from dotenv import load_dotenv

load_dotenv()

# Paths
ROBOT_CONFIG_PATH = os.getenv('PERCH_SIM_CONFIG', 'data/robot_config.json')
SCENARIO_DIR = os.getenv('PERCH_SIM_SCENARIOS', 'data/scenarios')
OUTPUT_DIR = os.getenv('PERCH_SIM_OUT', 'out')

# Simulation Configuration
DEFAULT_DT = float(os.getenv('PERCH_SIM_DT', '0.001'))
MAX_DT = 0.01
BATCH_WORKERS = int(os.getenv('PERCH_SIM_WORKERS', '1'))

# Logging Configuration
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO').upper()
LOG_FILE = os.getenv('LOG_FILE', 'perch_sim.log')
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Physical constants
P_ATM = 101.3  # kPa absolute
GRAVITY = 9.81

# Output formatting
CSV_FLOAT_FORMAT = '%.6g'
CSV_LINE_TERMINATOR = '\n'

# CLI exit codes
EXIT_CODES = {
    'ok': 0,
    'unexpected': 1,
    'config_error': 2,
    'infeasible_design': 3,
    'invariant_violation': 4,
}

# Trace column layouts
PRESSURE_COLUMNS = ['t_s', 'p_joint_kpa', 'p_bottom_kpa', 'sv1', 'sv2', 'pump_pwm', 'mode']
FLIGHT_COLUMNS = ['t_s', 'x', 'y', 'z', 'phi', 'theta', 'psi', 'l1', 'l2', 'l3', 'l4']
TRACE_COLUMNS = FLIGHT_COLUMNS + PRESSURE_COLUMNS[1:] + ['phase', 'stage']
TORQUE_COLUMNS = ['theta_rad', 'p0_kpa', 'torque_nm']
TRUTH_TABLE_COLUMNS = ['sv1', 'sv2', 'pump', 'ordering', 'joint', 'bottom']

# Output file names inside --out
OUTPUT_FILES = {
    'pressure': 'pressure.csv',
    'flight': 'flight.csv',
    'trace': 'trace.csv',
    'summary': 'summary.json',
    'torque': 'torque_table.csv',
    'design': 'design_pressure.json',
    'fit': 'torque_fit.json',
}

# Mission phases in FSM order
PHASES = ['Search', 'Approach', 'Reach', 'Perch', 'Deperch']
