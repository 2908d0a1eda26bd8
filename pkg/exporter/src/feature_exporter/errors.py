"""Typed exporter failures, all fatal and all naming the offending input."""


class ExportError(Exception):
    """Base class for everything this package raises on purpose."""


class JobError(ExportError):
    """The job description is malformed or references impossible work."""


class DecodeError(ExportError):
    """An image or mask file could not be decoded."""


class ShapeError(ExportError):
    """An image/mask pair disagrees on spatial dimensions."""


class BackboneError(ExportError):
    """The requested backbone or weights cannot be constructed."""
