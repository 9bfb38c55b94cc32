"""Exception hierarchy.

Every error carries a short machine-readable ``code`` (the class name) and an
``exit_code`` used by the command line: 1 for invalid input, 2 for generator
or infeasibility failures.
"""

from __future__ import annotations


class ShiftlabError(Exception):
    exit_code = 1

    @property
    def code(self) -> str:
        return type(self).__name__


class ValidationError(ShiftlabError):
    exit_code = 1


class GeneratorError(ShiftlabError):
    exit_code = 2


# -- distributions ---------------------------------------------------------

class NegativeProbability(ValidationError):
    pass


class RowSumViolation(ValidationError):
    def __init__(self, x, total: float):
        super().__init__(f"probabilities for x={x!r} sum to {total!r}")
        self.x = x
        self.total = total


class EmptySupport(ValidationError):
    pass


class AlphabetError(ValidationError):
    pass


# -- shifts ------------------------------------------------------------------

class KappaOutOfRange(ValidationError):
    pass


class ScaleOutOfRange(ValidationError):
    pass


class ZeroCellInBase(GeneratorError):
    def __init__(self, x, y1, y2):
        super().__init__(f"base cell (x={x!r}, y1={y1!r}, y2={y2!r}) has zero mass")
        self.x, self.y1, self.y2 = x, y1, y2


class ZeroMarginalCell(GeneratorError):
    def __init__(self, x, y1):
        super().__init__(f"P(y1={y1!r} | x={x!r}) is zero")
        self.x, self.y1 = x, y1


class GeneratorViolatesInvariantConditional(GeneratorError):
    pass


class EmptySampleSet(ValidationError):
    pass


# -- estimation --------------------------------------------------------------

class MissingCovariateCell(ValidationError):
    def __init__(self, x, period: int | None = None):
        where = "" if period is None else f" in period {period}"
        super().__init__(f"no rows with x={x!r}{where}")
        self.x = x
        self.period = period


class ZeroMassCovariate(ValidationError):
    pass


class LinearProxyNotAsserted(ValidationError):
    pass


# -- assignment --------------------------------------------------------------

class Infeasible(GeneratorError):
    def __init__(self, group, reason: str):
        where = "" if group is None else f" (group {group!r})"
        super().__init__(f"infeasible{where}: {reason}")
        self.group = group
        self.reason = reason


class InstanceTooLarge(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


# -- io ------------------------------------------------------------------------

class ParseError(ValidationError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaViolation(ValidationError):
    def __init__(self, line: int | None, reason: str):
        prefix = "" if line is None else f"line {line}: "
        super().__init__(prefix + reason)
        self.line = line
        self.reason = reason


class ConfigError(ValidationError):
    pass
