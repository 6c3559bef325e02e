"""Exception hierarchy shared by every module."""


class SpectrackError(Exception):
    pass


class ValidationError(SpectrackError, ValueError):
    """Bad shapes, mismatched inputs or malformed documents."""


class DimensionError(ValidationError):
    pass


class ParameterError(ValidationError):
    pass


class GuardError(ValidationError):
    """Input too large for a routine that materializes dense matrices."""


class ManifestError(ValidationError):
    pass


class DegenerateNormError(SpectrackError, ArithmeticError):
    """Raised when a vector with (numerically) zero norm must be normalized."""


class SpectralCollapseError(DegenerateNormError):
    pass


class DivergenceError(SpectrackError, ArithmeticError):
    def __init__(self, message, epoch):
        super().__init__(message)
        self.epoch = epoch


class FormatError(SpectrackError):
    """Binary file failed validation; ``field`` names the offending header part."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
