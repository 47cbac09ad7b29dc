"""Exception types shared across the package.

Everything raised on purpose derives from CdiError so callers (the CLI, the
admission service) can map failures to exit codes and HTTP statuses in one
place.  Verification outcomes are not exceptions; they come back as result
values with a reason string.
"""


class CdiError(Exception):
    """Base class for all errors raised by this package."""


class EncodingError(CdiError):
    """A value cannot be canonically encoded."""


class KeyMaterialError(CdiError):
    """Key bytes or a key file are not usable (wrong length, bad point, bad format)."""


class FormatError(CdiError):
    """An interchange document (JSON structure, digest string) is malformed.

    Carries an optional dotted field path pointing at the offending part.
    """

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(message if field is None else f"{field}: {message}")


class CertificationError(CdiError):
    """A certification or authority chain cannot be created as requested."""


class ReportError(CdiError):
    """A report cannot be created as requested."""


class BundleError(CdiError):
    """A bundle cannot be assembled (incomplete closure, conflicting reports)."""


class GraphError(CdiError):
    """The provenance graph is structurally unsound (cycle, orphan report).

    ``reason`` is the machine-readable code; ``report_id`` names a
    deterministic witness node when one exists.
    """

    def __init__(self, message: str, reason: str, report_id=None):
        self.reason = reason
        self.report_id = report_id
        super().__init__(message)


class PolicyParseError(CdiError):
    """A policy document failed to parse or validate.

    ``field`` is a dotted path into the document; ``line`` is set when the
    failure came from the JSON layer itself.
    """

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        if field is not None:
            message = f"{field}: {message}"
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
