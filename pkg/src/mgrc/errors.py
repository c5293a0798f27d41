"""Exception hierarchy.

Every error raised by the library derives from :class:`MgrcError`; the CLI
reports ``type(exc).__name__`` so the class names double as diagnostics.
"""


class MgrcError(Exception):
    """Base class for all library errors."""


class InvalidShape(MgrcError):
    pass


class TooManyDims(MgrcError):
    pass


class LevelOutOfRange(MgrcError):
    pass


class ShapeMismatch(MgrcError):
    pass


class NonFiniteInput(MgrcError):
    pass


class DegenerateData(MgrcError):
    """Relative tolerance requested on data with zero range (or zero RMS)."""


class InvalidState(MgrcError):
    pass


class Overflow(MgrcError):
    """A quantized value does not fit in 63 bits of magnitude."""


class UnknownCodec(MgrcError):
    pass


class CorruptStream(MgrcError):
    pass


class ToleranceUnreachable(MgrcError):
    pass


class BadMagic(MgrcError):
    pass


class UnsupportedVersion(MgrcError):
    pass


class ChecksumMismatch(MgrcError):
    pass


class PlaneCountOutOfRange(MgrcError):
    pass


class UnsatisfiableTolerance(MgrcError):
    """Even full retrieval cannot meet the requested tolerance.

    The best-effort plan (fetch everything that is left) is attached as
    ``request`` so callers can proceed anyway.
    """

    def __init__(self, message, request=None):
        super().__init__(message)
        self.request = request


class PrefixViolation(MgrcError):
    pass


class BudgetTooSmall(MgrcError):
    pass


class SizeMismatch(MgrcError):
    pass
