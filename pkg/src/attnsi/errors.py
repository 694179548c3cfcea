"""Exception types shared across the package."""


class DomainError(ArithmeticError):
    """An elementwise operation was applied outside its domain (e.g. division
    by zero or sqrt of a negative value)."""


class ConfigError(ValueError):
    """Inconsistent model configuration or tensor shapes."""


class WeightFormatError(ValueError):
    """A weight interchange file is malformed or incompatible."""


class CovarianceError(ValueError):
    """The noise covariance is not usable (not SPD, bad quadratic form)."""


class DegenerateRegionError(ValueError):
    """The attention region is empty or covers every pixel, so the contrast
    hypothesis is undefined and the test must be skipped."""


class RegionConsistencyError(RuntimeError):
    """The observed statistic was classified outside its own truncation
    region; indicates a nondeterministic or broken model evaluation."""
