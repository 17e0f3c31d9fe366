"""Exception hierarchy shared by every module."""


class TPSError(Exception):
    """Base class for all errors raised by tpsdesign."""

    exit_code = 1


class InvalidInputError(TPSError, ValueError):
    """An argument violates a documented precondition."""


class ConfigError(InvalidInputError):
    """A configuration value is missing, unknown or invalid.

    ``field`` holds the dotted path of the offending entry when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class NumericalError(TPSError, ArithmeticError):
    """A numerical routine failed (singular system, non-finite result, ...)."""

    exit_code = 3


class NonFiniteError(NumericalError):
    """A loss or derivative evaluated to NaN or infinity."""

    def __init__(self, message, terms=()):
        self.terms = tuple(terms)
        super().__init__(message)


class ConvergenceError(NumericalError):
    """An iterative procedure hit its cap before reaching tolerance."""


class DegeneracyError(NumericalError):
    """A particle ensemble collapsed onto a single distinct particle."""


class UnsupportedOperationError(TPSError, TypeError):
    """The autodiff engine was asked to differentiate an unsupported primitive."""


class MissingArtifactError(TPSError):
    """A command needs an artifact produced by an earlier command."""

    exit_code = 1


class ConfigNotFoundError(ConfigError):
    """The configuration file does not exist."""


class ConfigSyntaxError(ConfigError):
    """The configuration file is not well-formed JSON."""


class UnknownKeyError(ConfigError):
    """The configuration contains a key that is not part of the schema."""
