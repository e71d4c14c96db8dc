class PdppError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(PdppError, ValueError):
    pass


class IngestionError(PdppError, ValueError):
    pass


class SizeError(PdppError, ValueError):
    pass


class NumericError(PdppError, ArithmeticError):
    pass


class TrainingError(PdppError, ValueError):
    pass
