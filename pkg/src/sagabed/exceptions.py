"""Exception hierarchy shared by every module."""


class SagabedError(Exception):
    """Base class for all package errors."""


class ConfigError(SagabedError, ValueError):
    """Invalid hyperparameters or configuration file."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = ""
        if key is not None:
            where += f"key '{key}'"
        if line is not None:
            where += f" (line {line})" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ShapeError(SagabedError, ValueError):
    pass


class ContractError(SagabedError, ValueError):
    """A caller broke an operation's precondition (stale cache, bad basis, ...)."""


class NumericError(SagabedError, ArithmeticError):
    pass


class DomainError(SagabedError, ValueError):
    """Design outside its box constraints."""


class SupportError(SagabedError, ValueError):
    """Model parameters outside the prior support."""


class UnsupportedModelError(SagabedError, NotImplementedError):
    """The model lacks a capability (likelihood, pathwise gradient) the caller needs."""


class DiagnosticsError(SagabedError, RuntimeError):
    pass
