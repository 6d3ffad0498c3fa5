"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class BronchoError(Exception):
    exit_code = 1


class InputError(BronchoError):
    """Unreadable or malformed input (missing file, bad flag value, bad sidecar)."""

    exit_code = 2


class FormatError(BronchoError):
    """Shape or on-disk format problem."""

    exit_code = 3


class ShapeMismatchError(FormatError, ValueError):
    pass


class DomainError(BronchoError, ValueError):
    """Input is well-formed but outside the operation's domain (e.g. empty ground truth)."""

    exit_code = 4


class EmptyMaskError(DomainError):
    pass


class CheckFailure(BronchoError):
    """An internal verification (gradient check, invariant) failed."""

    exit_code = 5
