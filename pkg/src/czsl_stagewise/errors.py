"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ParameterError(ValueError):
    """A numeric parameter is out of its allowed range."""


class EvaluationError(RuntimeError):
    """A function produced a non-finite value where a finite one was required."""


class ConfigurationError(ValueError):
    """A model or data configuration is internally inconsistent."""


class VocabularyError(KeyError):
    """A state/object token is not part of the vocabulary."""


class IntegrityError(ValueError):
    """Split or candidate-set bookkeeping is inconsistent."""


class UndefinedMetricError(ValueError):
    """A metric cannot be computed, e.g. because a subset is empty."""


class GenerationError(ValueError):
    """A synthetic task specification cannot be realized."""


class UsageError(ValueError):
    """Malformed user input (config keys, CLI arguments, variant names)."""


class NonFiniteLossError(FloatingPointError):
    """Training produced a NaN/Inf loss."""
