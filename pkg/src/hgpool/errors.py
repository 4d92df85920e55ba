"""Exception hierarchy shared by every module."""


class HGPoolError(Exception):
    """Base class for package errors."""


class DimensionError(HGPoolError, ValueError):
    """Operands have incompatible shapes."""


class NumericalError(HGPoolError, ArithmeticError):
    """A value became NaN/Inf or training diverged."""


class ConfigError(HGPoolError, ValueError):
    """Invalid configuration or missing state."""


class ConstructionError(HGPoolError, ValueError):
    """A road graph cannot be built from the given topology."""


class GradingError(HGPoolError, ValueError):
    """The SOM could not produce the requested number of grades."""


class IngestionError(HGPoolError, ValueError):
    """Malformed or inconsistent input files."""
