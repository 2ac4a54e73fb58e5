"""Exception hierarchy shared across the engine.

Each error carries a CLI exit-code category so the command line tool can
fail with a stable, scriptable status.
"""


class RlfolioError(Exception):
    """Base class for all engine errors."""

    exit_code = 1


class ConfigError(RlfolioError):
    """Invalid or inconsistent experiment configuration."""

    exit_code = 2


class ParseError(RlfolioError):
    """Malformed input file row."""

    exit_code = 3

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyInputError(RlfolioError):
    """Input file contained no usable rows."""

    exit_code = 3


class MissingInputError(RlfolioError):
    """Input file could not be opened."""

    exit_code = 3


class UnknownAssetError(RlfolioError):
    """Referenced asset does not exist in the price panel."""

    exit_code = 3


class InsufficientHistoryError(RlfolioError):
    """Not enough observations for the requested window."""

    exit_code = 4


class EmptyUniverseError(RlfolioError):
    """No tradable assets at the requested date."""

    exit_code = 4


class DomainError(RlfolioError):
    """Numeric input outside the mathematical domain of an operation."""

    exit_code = 4


class WipeoutError(RlfolioError):
    """Portfolio return at or below -100%."""

    exit_code = 4


class ContractViolation(RlfolioError):
    """Caller broke an operation precondition (e.g. off-simplex action)."""

    exit_code = 4


class DegenerateSharpeError(RlfolioError):
    """Sharpe ratio undefined (zero volatility or too few points)."""

    exit_code = 4


class EmptyScheduleError(RlfolioError):
    """Too few days to build a single walk-forward fold."""

    exit_code = 4


class InfeasibleError(RlfolioError):
    """Constraint set of an optimization problem is empty."""

    exit_code = 4


class RegressionError(RlfolioError):
    """Regression inputs degenerate (e.g. zero benchmark variance)."""

    exit_code = 4


class AlignmentError(RlfolioError):
    """Series expected on a common date index are misaligned."""

    exit_code = 4


class TrainingAbort(RlfolioError):
    """Training produced non-finite losses and was aborted."""

    exit_code = 5
