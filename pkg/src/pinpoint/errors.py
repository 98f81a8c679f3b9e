class PinPointError(Exception):
    pass


class DimensionError(PinPointError, ValueError):
    pass


class ConfigError(PinPointError, ValueError):
    pass


class BoundsError(PinPointError, IndexError):
    pass


class NumericalError(PinPointError, ArithmeticError):
    """Raised when a NaN/Inf shows up in a loss or gradient."""


class PipelineError(PinPointError, RuntimeError):
    pass
