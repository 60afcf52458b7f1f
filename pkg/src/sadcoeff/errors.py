"""Exception types shared across the package.

Everything derives from ValueError or RuntimeError so callers that do not
care about the distinction can still catch the usual built-ins.
"""


class FormatError(ValueError):
    """A file or byte stream does not match its declared on-disk format."""


class EmptyInputError(ValueError):
    """An input that must be non-empty (audio, sequences, ...) is empty or too short."""


class DimensionError(ValueError):
    """An array has the wrong shape or length for the operation."""


class DegenerateGeometryError(ValueError):
    """Geometry collapsed to a configuration where the quantity is undefined
    (e.g. zero eye width)."""


class DegenerateInputError(ValueError):
    """Statistically degenerate input, e.g. zero variance where a correlation
    is requested."""


class ConfigError(ValueError):
    """Bad run configuration: unknown key, unparsable value, or out of range."""


class TrainingDivergedError(RuntimeError):
    """A training loss became non-finite."""
