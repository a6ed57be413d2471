"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError (and subclasses) -> 3, NumericError -> 4.
"""


class FewshotError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(FewshotError):
    """Invalid configuration: unknown key, bad type, out-of-range value."""


class DataError(FewshotError):
    """Invalid or missing data: dataset layout, image files, weight files."""


class NumericError(FewshotError):
    """Numerical failure: non-finite values, undefined metric, graph misuse."""


class ShapeError(NumericError):
    """Operand shapes are incompatible. Messages name both shapes."""


class GraphError(NumericError):
    """Autodiff graph misuse: non-scalar loss, repeated backward."""


# --- image decoding -------------------------------------------------------

class ImageFormatError(DataError):
    """Malformed image header."""


class ImageTruncatedError(DataError):
    """Image payload shorter than the header promises."""


# --- weight file format ---------------------------------------------------

class WeightsFormatError(DataError):
    """Base class for weight-file decoding failures."""


class BadMagicError(WeightsFormatError):
    """File does not start with the expected magic bytes."""


class TruncatedWeightsError(WeightsFormatError):
    """File ends before the declared payload is complete."""


class UnknownVersionError(WeightsFormatError):
    """File declares a format version this reader does not know."""


class ChecksumError(WeightsFormatError):
    """Trailing CRC32 does not match the file contents."""


class NonFinitePayloadError(WeightsFormatError):
    """A stored tensor contains NaN or infinity."""
