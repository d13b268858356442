"""Exception hierarchy.

Data errors and numerical errors are kept apart so the command line can map
them to distinct exit codes.
"""

from __future__ import annotations


class PanelFEError(Exception):
    """Base class for all package errors."""

    def record(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


class DataError(PanelFEError):
    """Malformed or inconsistent input data."""


class NumericalError(PanelFEError):
    """A computation could not be carried out reliably."""


class ConfigError(PanelFEError):
    """Invalid request, configuration or specification string."""


class MissingCell(DataError):
    def __init__(self, id_, t):
        self.id, self.t = id_, t
        super().__init__(f"missing cell (id={id_}, t={t})")


class NonNumeric(DataError):
    def __init__(self, id_, t, column, value):
        self.id, self.t, self.column = id_, t, column
        super().__init__(f"non-numeric value {value!r} in column {column!r} at (id={id_}, t={t})")


class DuplicateRow(DataError):
    def __init__(self, id_, t):
        self.id, self.t = id_, t
        super().__init__(f"duplicate row (id={id_}, t={t})")


class LagTooLarge(DataError):
    pass


class TooShort(DataError):
    pass


class SingularDesign(NumericalError):
    def __init__(self, ratio: float, where: str = "full panel"):
        self.ratio = ratio
        self.where = where
        super().__init__(f"singular within moment matrix on {where}: "
                         f"relative min eigenvalue {ratio:.3e}")


class DegenerateVariance(NumericalError):
    pass


class SingularRestriction(NumericalError):
    pass


class TooManyFailures(NumericalError):
    pass


class NotApplicable(ConfigError):
    pass


class BadLevel(ConfigError):
    pass


class TooFewReplicates(ConfigError):
    pass


class SchemeMismatch(ConfigError):
    pass


class NonStationarySpec(ConfigError):
    pass


class NoClosedForm(ConfigError):
    pass
