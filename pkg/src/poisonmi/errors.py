class PoisonMIError(Exception):
    """Base class for all package errors."""


class DimensionError(PoisonMIError, ValueError):
    pass


class ConfigError(PoisonMIError, ValueError):
    pass


class EmptyInputError(PoisonMIError, ValueError):
    pass


class FormatError(PoisonMIError, ValueError):
    pass


class StateError(PoisonMIError, RuntimeError):
    pass


class InsufficientDataError(PoisonMIError, ValueError):
    pass


class ParseError(PoisonMIError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class CheckpointError(PoisonMIError, ValueError):
    pass
