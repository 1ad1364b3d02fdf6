"""Shared exception types.

Every exception carries an ErrorKind-compatible category string so that the
error-handling rules can classify any failure raised anywhere in the system.
Operations whose contracts promise a union return (parse results, clamp
results, SQL results) return value objects instead of raising; exceptions are
reserved for contract violations and infrastructure faults.
"""

from __future__ import annotations


class VizGuardError(Exception):
    """Base class; `category` feeds the error classifier."""

    category = "ExecError"

    def __init__(self, message: str = "", *, code: str = ""):
        super().__init__(message)
        self.code = code or type(self).__name__


class ConfigError(VizGuardError):
    category = "ModelError"


class DomainError(VizGuardError):
    """Numeric input outside its documented domain."""

    category = "ParamError"


class ToolError(VizGuardError):
    """Tool-layer fault: unknown table, closed handle, bad reference file."""

    category = "ExecError"

    def __init__(self, message: str = "", *, code: str = "", category: str = ""):
        super().__init__(message, code=code)
        if category:
            self.category = category


class GatewayError(VizGuardError):
    """Model transport, script replay, or provider configuration fault."""

    category = "ModelError"

    def __init__(self, message: str = "", *, code: str = "", category: str = ""):
        super().__init__(message, code=code)
        if category:
            self.category = category


class UnknownToolError(VizGuardError):
    category = "ParseError"


class UnknownInterfaceError(VizGuardError):
    category = "ExecError"


class PrerequisiteUnmet(VizGuardError):
    category = "ExecError"

    def __init__(self, message: str = "", *, missing: tuple[str, ...] = ()):
        super().__init__(message)
        self.missing = missing


class NoViableAction(VizGuardError):
    category = "ExecError"


class NoCompatibleModel(VizGuardError):
    category = "ModelError"


class ScoringUnavailable(VizGuardError):
    category = "ParseError"


class InvalidImageError(VizGuardError):
    category = "IoError"


class FormatError(VizGuardError):
    """Malformed manifest or record file; the message names the record."""

    category = "ParseError"
