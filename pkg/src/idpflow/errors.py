"""Exception hierarchy.

Each family maps onto a CLI exit code: I/O problems exit 2, validation of
input data exits 3, model failures exit 4 and invariant breaches exit 5.
"""
from __future__ import annotations


class IdpFlowError(Exception):
    exit_code = 5


class ValidationError(IdpFlowError):
    exit_code = 3


class ModelError(IdpFlowError):
    exit_code = 4


class InvariantBreach(IdpFlowError):
    exit_code = 5


class ConfigError(ValidationError):
    pass


# --- corpus -----------------------------------------------------------------

class UnknownProvince(ValidationError):
    def __init__(self, name: str, line: int | None = None):
        self.name = name
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"unknown province {name!r}{where}")


class DuplicateKey(ValidationError):
    def __init__(self, month, origin, destination, line: int | None = None):
        self.key = (month, origin, destination)
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"duplicate flow key month={month} {origin}->{destination}{where}")


class MalformedRow(ValidationError):
    def __init__(self, line: int, reason: str = ""):
        self.line = line
        super().__init__(f"malformed row at line {line}" + (f": {reason}" if reason else ""))


class MalformedDate(ValidationError):
    def __init__(self, value: str, line: int | None = None):
        self.value = value
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"malformed date {value!r}{where}")


class UnmappedCommodity(ValidationError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"commodity {name!r} is not in the commodity map")


class NonpositiveValue(ValidationError):
    def __init__(self, line: int, value):
        self.line = line
        super().__init__(f"non-positive market value {value!r} at line {line}")


class DateBeforeEpoch(ValidationError):
    pass


class GazetteerError(ValidationError):
    pass


# --- featurize --------------------------------------------------------------

class WholeMonthMissing(ValidationError):
    def __init__(self, month: int, category: str):
        self.month = month
        self.category = category
        super().__init__(f"no province has a {category} value in month {month}")


class DegenerateVariance(ValidationError):
    def __init__(self, source: str):
        self.source = source
        super().__init__(f"conflict counts for source {source} have zero variance")


class CoverageGap(ValidationError):
    def __init__(self, month: int, feature: str):
        self.month = month
        self.feature = feature
        super().__init__(f"covariate {feature} missing for month {month}")


class NegativeFlow(ValidationError):
    pass


# --- models -----------------------------------------------------------------

class InvalidHyperparameter(ModelError):
    pass


class SingularDesign(ModelError):
    pass


class NonConvergence(ModelError):
    def __init__(self, iterations: int, last_delta: float):
        self.iterations = iterations
        self.last_delta = last_delta
        super().__init__(f"no convergence after {iterations} iterations (last relative change {last_delta:.3g})")


class Divergence(ModelError):
    pass


class WrongModelKind(ModelError):
    pass


class EmptyTraining(ModelError):
    def __init__(self, month: int):
        self.month = month
        super().__init__(f"no training rows before forecast month {month}")


class NoIntervals(ModelError):
    pass


class MissingRun(IdpFlowError):
    exit_code = 2
