import math
from typing import Iterable, Optional

from config import CSV_FLOAT_FORMAT


def on_off(flag: bool) -> str:
    """Format a valve or pump flag as ON/OFF"""
    return 'ON' if flag else 'OFF'


def format_number(value: float) -> str:
    """Format a float the way every output file does (%.6g)"""
    if value is None:
        return ''
    if isinstance(value, bool):
        return '1' if value else '0'
    if isinstance(value, float) and value == 0.0:
        # avoid '-0'
        value = 0.0
    return CSV_FLOAT_FORMAT % value


def format_pressure(value: Optional[float]) -> str:
    """Format a gauge pressure for human-readable reports (e.g., '38.2 kPa')"""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return 'n/a'
    return f"{format_number(value)} kPa"


def format_roots(roots: Iterable[float]) -> str:
    """Format a list of roots as '{a, b, c}'"""
    return '{' + ', '.join(format_number(r) for r in roots) + '}'


def format_duration(seconds: Optional[float]) -> str:
    """Format a simulated time span (e.g., '4.25 s')"""
    if seconds is None:
        return 'never'
    return f"{seconds:.3f} s"


def truncate_text(text: str, max_length: int = 50) -> str:
    """Truncate text to max length with ellipsis"""
    if len(text) <= max_length:
        return text
    return text[:max_length - 3] + "..."
