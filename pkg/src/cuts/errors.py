"""Exception types raised across the toolkit.

Every failure mode that callers are expected to branch on gets its own
class so tests and CLI exit-code mapping can match on type rather than
message text.
"""


class CutsError(Exception):
    """Base class for all package-specific errors."""


# --- file / format errors ---------------------------------------------------

class UnsupportedFormatError(CutsError):
    """Raster file exists but is not an 8-bit grayscale or RGB image."""


class CorruptDataError(CutsError):
    """File payload is malformed beyond a simple truncation."""


class BadMagicError(CutsError):
    """Binary file does not start with the expected magic bytes."""


class TruncatedFileError(CutsError):
    """Binary file ends before the declared payload is complete."""


# --- shape / argument errors ------------------------------------------------

class ZeroDimensionError(CutsError):
    """Requested output size has a zero or negative dimension."""


class ShapeMismatchError(CutsError):
    """Two operands that must share a shape do not."""


class ChannelMismatchError(CutsError):
    """Image channel count does not match the encoder architecture."""


class DimMismatchError(CutsError):
    """Vector length does not match the expected dimension."""


class OutOfBoundsError(CutsError):
    """Pixel coordinate lies outside the image."""


class InvalidArchError(CutsError):
    """Architecture descriptor violates its invariants."""


# --- training errors ----------------------------------------------------------

class NonFiniteLossError(CutsError):
    """A loss became NaN/Inf; training has diverged."""


class TooManyAnchorsError(CutsError):
    """More anchors requested than eligible interior pixels."""


class EmptyPairsError(CutsError):
    """PairSet contains no anchors."""


class EmptyNegativesError(CutsError):
    """No anchor in the PairSet has a non-empty negative set."""


class LambdaOutOfRangeError(CutsError):
    """Loss weighting coefficient outside [0, 1]."""


# --- condensation / segmentation errors --------------------------------------

class NonPositiveEpsilonError(CutsError):
    """Kernel bandwidth must be strictly positive."""


class EmptyTraceError(CutsError):
    """Condensation trace has no snapshots."""


class SelectorUnsatisfiableError(CutsError):
    """No snapshot satisfies the requested granularity."""


class EmptyForegroundError(CutsError):
    """Hint mask has no foreground pixels."""


class EmptyMaskError(CutsError):
    """Distance metric needs at least one foreground pixel on each side."""


class KTooLargeError(CutsError):
    """More clusters requested than points available."""


# --- configuration ------------------------------------------------------------

class ConfigError(CutsError):
    """Run configuration is invalid; message names the offending key."""
