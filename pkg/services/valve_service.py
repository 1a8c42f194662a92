import logging
from enum import Enum
from typing import Dict, List, NamedTuple, Tuple

from config import TRUTH_TABLE_COLUMNS
from utils.formatters import on_off

logger = logging.getLogger(__name__)


class JointAction(str, Enum):
    INTAKE_PUMP = 'Intake(Pump)'
    INTAKE_PUMP_BOTTOM = 'Intake(Pump + Bottom)'
    EXHAUST = 'Exhaust'
    INTAKE_EXHAUST = 'Intake + Exhaust'
    HOLD = 'Hold'


class BottomAction(str, Enum):
    INTAKE_PUMP = 'Intake(Pump)'
    EXHAUST_JOINT = 'Exhaust(Joint)'
    HOLD = 'Hold'
    HOLD_DIFFERENT = 'Hold (Different Pressure)'
    HOLD_SAME = 'Hold (Same Pressure)'


class FlowMode(NamedTuple):
    joint_action: JointAction
    bottom_action: BottomAction

    @property
    def label(self) -> str:
        """Compact label used in trace files"""
        return f"J:{self.joint_action.value}|B:{self.bottom_action.value}"


# (pump_on, sv1, sv2, joint_above_bottom) -> FlowMode
# SV1 routes the pump into the bottom bag; SV2 vents the joint and closes the transfer line.
TRUTH_TABLE: Dict[Tuple[bool, bool, bool, bool], FlowMode] = {
    (True, True, True, True): FlowMode(JointAction.EXHAUST, BottomAction.INTAKE_PUMP),
    (True, True, True, False): FlowMode(JointAction.EXHAUST, BottomAction.INTAKE_PUMP),
    (True, True, False, True): FlowMode(JointAction.HOLD, BottomAction.INTAKE_PUMP),
    (True, True, False, False): FlowMode(JointAction.INTAKE_PUMP, BottomAction.INTAKE_PUMP),
    (True, False, True, True): FlowMode(JointAction.INTAKE_EXHAUST, BottomAction.HOLD),
    (True, False, True, False): FlowMode(JointAction.INTAKE_EXHAUST, BottomAction.HOLD),
    (True, False, False, True): FlowMode(JointAction.INTAKE_PUMP, BottomAction.HOLD),
    (True, False, False, False): FlowMode(JointAction.INTAKE_PUMP_BOTTOM, BottomAction.EXHAUST_JOINT),
    (False, True, True, True): FlowMode(JointAction.EXHAUST, BottomAction.HOLD),
    (False, True, True, False): FlowMode(JointAction.EXHAUST, BottomAction.HOLD),
    (False, True, False, True): FlowMode(JointAction.HOLD, BottomAction.HOLD_DIFFERENT),
    (False, True, False, False): FlowMode(JointAction.HOLD, BottomAction.HOLD_SAME),
    (False, False, True, True): FlowMode(JointAction.EXHAUST, BottomAction.HOLD),
    (False, False, True, False): FlowMode(JointAction.EXHAUST, BottomAction.HOLD),
    (False, False, False, True): FlowMode(JointAction.HOLD, BottomAction.HOLD_DIFFERENT),
    (False, False, False, False): FlowMode(JointAction.HOLD, BottomAction.HOLD_SAME),
}


def valve_logic(sv1: bool, sv2: bool, pump_on: bool, p_joint: float, p_bottom: float) -> FlowMode:
    """Actuator behaviour for a valve/pump setting and the current pressure ordering"""
    return TRUTH_TABLE[(bool(pump_on), bool(sv1), bool(sv2), p_joint > p_bottom)]


def truth_table_rows() -> List[List[str]]:
    """All 16 cells in dump order: pump, sv1, sv2, ordering"""
    rows = []
    for pump_on in (True, False):
        for sv1 in (True, False):
            for sv2 in (True, False):
                for joint_above in (True, False):
                    mode = TRUTH_TABLE[(pump_on, sv1, sv2, joint_above)]
                    rows.append([
                        on_off(sv1),
                        on_off(sv2),
                        on_off(pump_on),
                        'J>B' if joint_above else 'J<=B',
                        mode.joint_action.value,
                        mode.bottom_action.value,
                    ])
    return rows


def render_truth_tables() -> str:
    """Deterministic CSV text of every truth-table cell"""
    lines = [','.join(TRUTH_TABLE_COLUMNS)]
    lines.extend(','.join(row) for row in truth_table_rows())
    return '\n'.join(lines) + '\n'
