"""Exception hierarchy shared across the package."""


class DiffAugError(Exception):
    """Base class for all library errors."""


class DimensionError(DiffAugError, ValueError):
    """Shapes do not line up."""


class NumericError(DiffAugError, ArithmeticError):
    """A NaN or Inf showed up where a finite value is required."""


class ParameterError(DiffAugError, ValueError):
    """A hyperparameter or argument is outside its valid range."""


class ParseError(DiffAugError, ValueError):
    """Malformed input file."""


class StructureError(DiffAugError, ValueError):
    """Input file is well-formed per line but inconsistent as a whole (ragged rows)."""


class SamplingError(DiffAugError, ValueError):
    """Not enough data to draw the requested sample."""


class ProtocolError(DiffAugError, ValueError):
    """Evaluation inputs violate the protocol (e.g. a single class)."""


class ConfigError(DiffAugError, ValueError):
    """Invalid run configuration. ``path`` names the offending field."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
