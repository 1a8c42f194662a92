import logging
from typing import Callable, List, Sequence

import numpy as np
from scipy.optimize import brentq

from utils.errors import SolverError

logger = logging.getLogger(__name__)

XTOL = 1e-12


def bracketed_root(func: Callable[[float], float], lo: float, hi: float, label: str = 'root') -> float:
    """
    Find a root of func on [lo, hi] by Brent's method.

    Args:
        func: Scalar function with a sign change on the bracket
        lo: Lower end of the bracket
        hi: Upper end of the bracket
        label: Name used in error messages

    Returns:
        The root, or an exact endpoint when func vanishes there
    """
    f_lo = func(lo)
    f_hi = func(hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if np.sign(f_lo) == np.sign(f_hi):
        raise SolverError(
            f"No sign change for {label} on [{lo:.6g}, {hi:.6g}]: "
            f"residuals {f_lo:.6g} and {f_hi:.6g}",
            residuals=(f_lo, f_hi),
        )
    return float(brentq(func, lo, hi, xtol=XTOL, rtol=4 * np.finfo(float).eps, maxiter=200))


def real_polynomial_roots(coefficients: Sequence[float], imag_tol: float = 1e-7) -> List[float]:
    """All real roots of a polynomial (highest degree first), sorted ascending"""
    roots = np.roots(np.asarray(coefficients, dtype=float))
    real = [float(r.real) for r in roots if abs(r.imag) <= imag_tol * max(1.0, abs(r))]
    return sorted(real)


def polish_root(func: Callable[[float], float], guess: float, lo: float, hi: float,
                width: float = 1.0) -> float:
    """Refine an approximate root inside [lo, hi]; keeps the guess when no bracket is found"""
    a = max(lo, guess - width)
    b = min(hi, guess + width)
    try:
        return bracketed_root(func, a, b, label='polished root')
    except SolverError:
        logger.debug(f"Could not bracket root near {guess:.6g}, keeping companion estimate")
        return guess
