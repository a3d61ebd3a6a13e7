"""Exception hierarchy.

Every error raised on purpose by the toolkit derives from ``MoodkitError`` so
the CLI can map it to a stable exit code.
"""


class MoodkitError(Exception):
    """Base class for toolkit errors."""


class ShapeError(MoodkitError, ValueError):
    """Array shapes or modality layouts do not line up."""


class ArgumentError(MoodkitError, ValueError):
    """An argument is outside its valid domain."""


class StateError(MoodkitError, RuntimeError):
    """An object was used before it was ready (e.g. an unfitted scorer)."""


class NumericalError(MoodkitError, ArithmeticError):
    """A computation produced non-finite values or a singular system."""


class ConfigError(MoodkitError, ValueError):
    """A configuration document failed validation."""


class DataError(MoodkitError, ValueError):
    """A dataset file is malformed. Carries the file and 1-based row."""

    def __init__(self, message, path=None, row=None):
        self.path = None if path is None else str(path)
        self.row = row
        where = ""
        if self.path is not None:
            where = f"{self.path}"
            if row is not None:
                where += f":{row}"
            where += ": "
        super().__init__(where + message)


class AlignmentError(DataError):
    """Row counts differ between files that must be aligned."""


class ChecksumError(DataError):
    """File bytes do not match the checksum recorded in the manifest."""


class NonFiniteValueError(DataError):
    """A NaN/Inf or unparsable number appears in a feature file."""


class SplitTagError(DataError):
    """A split tag is not one of the known split names."""
