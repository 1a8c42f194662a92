"""Exception types raised by the simulation services."""
from typing import List, Optional


class PerchSimError(Exception):
    """Base class for every error the simulator raises on purpose"""


class ConfigError(PerchSimError):
    """Robot configuration or scenario script failed validation"""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class DomainError(PerchSimError):
    """Argument outside the range where a model is defined"""


class SolverError(PerchSimError):
    """A root search could not be bracketed or did not converge"""

    def __init__(self, message: str, residuals: Optional[tuple] = None):
        self.residuals = residuals
        super().__init__(message)


class DesignInfeasibleError(PerchSimError):
    """No physically valid design pressure exists for the request"""

    def __init__(self, message: str, roots: Optional[List[float]] = None):
        self.roots = roots or []
        super().__init__(message)


class AmbiguousDesignError(DesignInfeasibleError):
    """More than one root lies inside the admissible pressure range"""


class FitError(PerchSimError):
    """Torque coefficient fit is underdetermined"""


class SynthesisError(PerchSimError):
    """Riccati gain synthesis failed to reach its residual certificate"""

    def __init__(self, message: str, residual: Optional[float] = None):
        self.residual = residual
        super().__init__(message)


class InfeasibleAttitudeError(PerchSimError):
    """Requested force has no upward component after yaw removal"""


class ScenarioAborted(PerchSimError):
    """A module error stopped a scenario; carries the trace recorded so far"""

    def __init__(self, message: str, trace=None, cause: Optional[Exception] = None):
        self.trace = trace
        self.cause = cause
        super().__init__(message)
