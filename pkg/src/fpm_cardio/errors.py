from typing import Optional


class FpmError(Exception):
    """Base class for every error raised by fpm_cardio."""


class ConfigError(FpmError):
    def __init__(self, message: str, key: str = "", line: Optional[int] = None):
        self.message = message
        self.key = key
        self.line = line
        location = ""
        if key:
            location += f"[{key}] "
        if line is not None:
            location += f"(line {line}) "
        super().__init__(f"{location}{message}")


class PartitionFormatError(ConfigError):
    pass


class DomainError(FpmError):
    pass


class DegenerateCellError(FpmError):
    pass


class DegenerateGeometryError(FpmError):
    def __init__(self, point: int, message: str):
        self.point = point
        super().__init__(f"point {point}: {message}")


class DegenerateSupportError(FpmError):
    def __init__(self, message: str, condition: float = float("inf")):
        self.condition = condition
        super().__init__(message)


class ContractError(FpmError):
    pass


class AssemblyError(FpmError):
    pass


class NumericError(FpmError):
    def __init__(self, message: str, node: int = -1, time: Optional[float] = None):
        self.node = node
        self.time = time
        where = f"node {node}"
        if time is not None:
            where += f", t = {time:g} ms"
        super().__init__(f"{message} ({where})")


class SolverError(FpmError):
    def __init__(self, message: str, residual: float = float("nan")):
        self.residual = residual
        super().__init__(message)


class PostProcessingError(FpmError):
    pass


class OutputError(FpmError):
    """A result file could not be written."""
