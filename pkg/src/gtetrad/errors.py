"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`GTetradError`.
The CLI maps the two branches below onto its exit codes: user-input problems
(:class:`ConfigurationError` and subclasses) exit with 2, numerical failures
(:class:`NumericalError` and subclasses) exit with 3.
"""


class GTetradError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GTetradError):
    """Invalid user configuration: unknown column, bad option, bad level."""


class ParseError(ConfigurationError):
    """A data file could not be parsed.

    Parameters
    ----------
    message : str
        Human-readable description.
    row : int, optional
        1-based data row (header excluded) where parsing failed.
    column : str, optional
        Column name where parsing failed.
    """

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ValidationError(ConfigurationError):
    """Data violate a structural requirement (constant column, non-finite value)."""


class NumericalError(GTetradError):
    """A numerical procedure failed (singular system, ill-conditioning)."""


class IdentificationError(NumericalError):
    """The bridge is not identified by the chosen instruments."""


class DegenerateDataError(NumericalError):
    """The data yield a degenerate test statistic (for example S_n == 0)."""


class StudyError(GTetradError):
    """A Monte Carlo study had too many failed replications."""

    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = failures or []
