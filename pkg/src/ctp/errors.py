"""Exception hierarchy shared by every module of the package."""


class CTPError(Exception):
    """Base class for all package errors."""

    #: process exit code used by the command line front-end
    exit_code = 1


class DivergentMoment(CTPError):
    exit_code = 10


class DoubleConsume(CTPError):
    exit_code = 11


class SimulationAborted(CTPError):
    """A trajectory stopped before its horizon.

    The partial state and event log are attached so that callers (the
    blow-up demonstration, ensemble accounting) can inspect what happened.
    """

    exit_code = 12

    def __init__(self, message, state=None, log=None):
        super().__init__(message)
        self.state = state
        self.log = log


class CascadeOverflow(SimulationAborted):
    exit_code = 13


class BudgetExceeded(SimulationAborted):
    exit_code = 14


class JumpBudgetExceeded(CTPError):
    exit_code = 15


class MassDrift(CTPError):
    exit_code = 16


class GridOverflow(CTPError):
    exit_code = 17


class InconclusiveNoise(CTPError):
    exit_code = 3


class ConvergenceFailure(CTPError):
    exit_code = 18


class ConstructionMismatch(CTPError):
    exit_code = 19


class HardAssertionFailure(CTPError):
    """A verification check (audit, tail bound) found violations."""

    exit_code = 4


class ConfigError(CTPError):
    """Aggregates every parse and validation problem found in a config."""

    exit_code = 2

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(str(e) for e in self.errors))


class ParseError(CTPError):
    exit_code = 2

    def __init__(self, line, message):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")


class ValidationError(CTPError):
    exit_code = 2

    def __init__(self, key, message):
        self.key = key
        self.message = message
        super().__init__(f"{key}: {message}")
