"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: usage/configuration mistakes exit 2,
data and file-format problems exit 3, training divergence exits 4.
"""


class GfSenseError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(GfSenseError, ValueError):
    """Array shapes or dimensions do not satisfy an operation's contract."""


class RejectedInputError(GfSenseError, ValueError):
    """Input contains values an operation refuses to process (NaN/inf)."""


class PhaseStateError(GfSenseError, ValueError):
    """A phase matrix is in the wrong calibration state for the operation."""


class FormatError(GfSenseError, ValueError):
    """A file does not look like the expected binary format."""


class UnsupportedVersionError(FormatError):
    """The file's format version is not handled by this reader."""


class CorruptFileError(FormatError):
    """The file's payload is inconsistent with its header."""


class ConfigError(GfSenseError, ValueError):
    """Invalid configuration (bad hyperparameters, model/input mismatch)."""


class DataError(GfSenseError, ValueError):
    """A dataset violates a precondition (empty, missing velocity, bad label)."""


class ModeError(GfSenseError, RuntimeError):
    """A train-only operation was invoked in evaluation mode (or vice versa)."""


class TapeError(GfSenseError, RuntimeError):
    """Misuse of a gradient tape (e.g. backward called twice)."""


class TrainingDivergenceError(GfSenseError, RuntimeError):
    """Training produced a non-finite loss or gradient."""
