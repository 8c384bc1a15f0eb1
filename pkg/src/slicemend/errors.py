"""Exception hierarchy shared across the toolkit.

Everything user-facing derives from SlicemendError so the CLI can map
domain failures to exit code 1 while genuine usage errors stay at 2.
"""


class SlicemendError(Exception):
    """Base class for all domain errors raised by this package."""


class FormatVersionError(SlicemendError):
    """A file or wire message declares an unsupported format version."""


class ParseError(SlicemendError):
    """A record or message could not be parsed; carries the line number."""

    def __init__(self, message, line_no=None):
        super().__init__(message if line_no is None else f"line {line_no}: {message}")
        self.line_no = line_no


class SchemaError(SlicemendError):
    """Attribute schema violation (unknown attribute, bad value, bad template)."""


class ConflictError(SlicemendError):
    """Duplicate identifier where uniqueness is required."""


class DomainError(SlicemendError):
    """Input outside an operation's mathematical domain."""


class BudgetError(SlicemendError):
    """Combinatorial enumeration would exceed the configured budget."""


class InconclusiveSliceError(SlicemendError):
    """Bug classification requested on a slice below the support floor."""


class PlanningError(SlicemendError):
    """Source selection or edit construction is impossible as requested."""


class ConfigError(SlicemendError):
    """Invalid or incomplete configuration (token maps, templates, scripts)."""


class ProtocolError(SlicemendError):
    """Malformed or out-of-contract wire traffic."""


class AccountingError(SlicemendError):
    """Responses and specs cannot be aligned for verdict accounting."""


class NumericError(SlicemendError):
    """A numeric kernel hit unrecoverable conditioning problems."""


class ReportError(SlicemendError):
    """Before/after datasets violate the fixed-validation contract."""


class SpecError(SlicemendError):
    """A simulation population spec is infeasible or inconsistent."""
