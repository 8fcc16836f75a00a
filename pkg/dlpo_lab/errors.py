class DLPOLabError(Exception):
    """Base class for every error raised by dlpo_lab."""


class ConfigError(DLPOLabError, ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        location = f"line {line}: " if line is not None else ""
        super().__init__(f"{location}{message}")


class ArgumentError(DLPOLabError, ValueError):
    pass


class TapeConstructionError(ArgumentError):
    pass


class NumericError(DLPOLabError, ArithmeticError):
    def __init__(self, message: str, node_index: int | None = None):
        self.node_index = node_index
        super().__init__(message)


class StateError(DLPOLabError, RuntimeError):
    pass


class CheckpointError(DLPOLabError):
    pass
