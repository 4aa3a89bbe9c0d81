"""Exception hierarchy shared across the package."""


class NormkitError(Exception):
    """Base class for every error raised by normkit."""


class ShapeMismatchError(NormkitError, ValueError):
    pass


class DomainError(NormkitError, ValueError):
    """An elementwise op was evaluated outside its domain (sqrt of a negative, division by zero)."""


class NonFiniteError(NormkitError, FloatingPointError):
    """A tensor would contain NaN or Inf."""


class ContractError(NormkitError, ValueError):
    pass


class GradCheckError(NormkitError):
    """Finite-difference evaluation hit a non-finite value.

    ``coordinate`` is the flat index being perturbed when it happened.
    """

    def __init__(self, message: str, coordinate: int):
        super().__init__(message)
        self.coordinate = coordinate


class InvalidRegionError(NormkitError, ValueError):
    pass


class ZeroDenominatorError(NormkitError, ZeroDivisionError):
    pass


class StateMismatchError(NormkitError, ValueError):
    pass


class DatasetError(NormkitError):
    pass


class MissingFileError(DatasetError, FileNotFoundError):
    pass


class BadMagicError(DatasetError, ValueError):
    pass


class TruncatedPayloadError(DatasetError, ValueError):
    pass


class ConfigError(NormkitError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending key when known."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class UnknownKeyError(ConfigError):
    pass


class MissingColumnError(NormkitError, ValueError):
    pass


class NumericalAbort(NormkitError):
    """Training produced a non-finite loss; carries the diagnostics record."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics
