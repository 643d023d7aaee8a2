"""Exception hierarchy shared across the toolkit."""


class NightcallError(Exception):
    """Base class for all toolkit errors."""


class ParseError(NightcallError):
    """Structurally malformed input text (bad number, wrong field count).

    Carries the 1-based line number when one is known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(NightcallError):
    """Well-formed input that violates a domain invariant."""


class UnknownSpeciesError(ValidationError):
    """A species code or id that the vocabulary does not contain."""

    def __init__(self, code: str):
        self.code = code
        super().__init__(f"unknown species: {code!r}")


class ConflictError(ValidationError):
    """Two sources of truth disagree (e.g. directory code vs label code)."""


class ConfigError(NightcallError):
    """Invalid or inconsistent configuration."""


class IoError(NightcallError):
    """Unreadable, unwritable, or unsupported file."""


class ChecksumError(IoError):
    """Downloaded archive does not match the pinned digest."""


class DegenerateError(NightcallError):
    """A quantity that cannot be normalized or is otherwise undefined."""


class TrainError(NightcallError):
    """Training diverged or was aborted (e.g. non-finite loss)."""
