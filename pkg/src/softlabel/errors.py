"""Exception hierarchy shared by every module.

Errors fall in two families so the CLI can map them onto exit codes:
``InputError`` (malformed or inconsistent data, exit 2) and ``BadConfig``
(invalid parameters, exit 3).
"""


class SoftLabelError(Exception):
    """Base class for all package errors."""


class InputError(SoftLabelError, ValueError):
    """Input data is malformed or inconsistent."""


class MalformedRecord(InputError):
    """A single record failed to parse or validate.

    ``locator`` names the offending line or feature, e.g. ``"line 3"`` or
    ``"feature 17"``; it is always present in ``str(exc)``.
    """

    def __init__(self, message, locator=None, source=None):
        self.locator = locator
        self.source = source
        parts = [p for p in (source, locator) if p]
        prefix = ":".join(str(p) for p in parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class MissingLabelFile(InputError):
    pass


class DuplicateImageId(InputError):
    pass


class UnknownCategory(InputError):
    pass


class DatasetMismatch(InputError):
    pass


class EmptyInput(InputError):
    pass


class NoGroundTruth(InputError):
    """No ground-truth instances for the category (or for any category)."""


class EmptySelection(InputError):
    pass


class UndefinedDelta(SoftLabelError, ZeroDivisionError):
    """Relative change against a zero baseline."""


class BadConfig(SoftLabelError, ValueError):
    """Invalid configuration value."""
