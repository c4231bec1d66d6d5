"""Exception types shared across riskflow.

Every error carries a short machine-readable ``code`` that the CLI prints as
``error: <code>: <message>`` and maps to an exit status.
"""

from __future__ import annotations


class RiskflowError(Exception):
    """Base class for all riskflow errors."""

    code = "error"
    exit_status = 2


class InvalidParams(RiskflowError, ValueError):
    code = "invalid-params"


class ConfigError(RiskflowError, ValueError):
    code = "config"


class ZeroMass(RiskflowError, ZeroDivisionError):
    """A weighted mean was requested for a quantity whose total is zero."""

    code = "zero-mass"


class GridMismatch(RiskflowError, ValueError):
    code = "grid-mismatch"


class DimensionMismatch(RiskflowError, ValueError):
    code = "dimension-mismatch"


class IndexOutOfRange(RiskflowError, IndexError):
    code = "index-out-of-range"


class ParseError(RiskflowError, ValueError):
    """Malformed CSV input. ``line`` and ``column`` are 1-based."""

    code = "parse"

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class RowNotStochastic(RiskflowError, ValueError):
    """A transition-matrix row does not sum to one."""

    code = "row-not-stochastic"

    def __init__(self, row: int, deficit: float, line: int | None = None):
        self.row = row
        self.deficit = deficit
        self.line = line
        msg = f"row {row} sums to {1.0 - deficit!r} (deficit {deficit:.3e})"
        if line is not None:
            msg = f"line {line}: " + msg
        super().__init__(msg)


class CFLViolation(RiskflowError, ValueError):
    code = "cfl"
    exit_status = 3


class ProfileBoundaryViolation(RiskflowError, ValueError):
    code = "profile-boundary"


class InsufficientOscillation(RiskflowError, ValueError):
    code = "insufficient-oscillation"


class IOFailure(RiskflowError, OSError):
    code = "io"
    exit_status = 4

    def __init__(self, message: str, exit_status: int | None = None):
        super().__init__(message)
        if exit_status is not None:
            self.exit_status = exit_status
