"""Exception taxonomy.

Pipeline errors (dimension/mask/prototype problems) and tensor-file format
errors live in separate branches so the CLI can map them to distinct exit
codes.
"""


class SsmatchError(Exception):
    """Base class for all errors raised by this package."""


class DimMismatchError(SsmatchError):
    """Operands have incompatible shapes."""


class EmptyMaskError(SsmatchError):
    """A binary mask selects no pixels where at least one is required."""


class ZeroPrototypeError(SsmatchError):
    """A prototype (or prototype-field column) has zero norm."""


class InvalidRatioError(SsmatchError):
    """A sampling ratio is outside its legal range."""


class ConfigError(SsmatchError):
    """Bad configuration: unknown key, invalid value, or broken invariant."""


class TensorFormatError(SsmatchError):
    """Base class for tensor-file parsing failures."""


class BadMagicError(TensorFormatError):
    """File does not start with the expected magic bytes."""


class BadVersionError(TensorFormatError):
    """Unsupported format version."""


class DimOverflowError(TensorFormatError):
    """Declared dimensions are zero or exceed the supported element count."""


class TruncatedPayloadError(TensorFormatError):
    """Payload size does not match the declared dimensions."""


class NonFiniteValueError(TensorFormatError):
    """Payload contains NaN or Inf; message names the byte offset."""


class BadValueError(TensorFormatError):
    """Payload value is illegal for the declared kind (e.g. binary mask
    byte outside {0, 1}); message names the byte offset."""
