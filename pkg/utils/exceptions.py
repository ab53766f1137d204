"""Error hierarchy shared by every stage of the tail-modeling pipeline."""
from typing import Dict, Optional


class EvtError(Exception):
    """Base class for all pipeline errors"""

    exit_code = 1


class InvalidArgumentError(EvtError, ValueError):
    """An argument violates an operation's precondition"""


class InsufficientDataError(EvtError):
    """Not enough samples (or exceedances) to carry out the operation"""

    exit_code = 2


class EstimationError(EvtError):
    """An optimizer failed to converge or produced an invalid model"""

    def __init__(self, message: str, diagnostics: Optional[Dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NoFeasibleSelectionError(EvtError):
    """No (u, r) pair satisfies the declustering selection criteria"""

    def __init__(self, message: str, scan=None):
        super().__init__(message)
        self.scan = scan


class ConstructionError(EvtError):
    """The composite CDF could not be stitched together"""

    def __init__(self, message: str, diagnostics: Optional[Dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ParseError(EvtError):
    """Malformed input file"""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InfeasibleError(EvtError):
    """The available samples cannot support a regular tail estimate"""

    exit_code = 2

    def __init__(self, message: str, required_increment: int = 0):
        super().__init__(message)
        self.required_increment = int(required_increment)
