"""Exception hierarchy shared by every devdiet package.

Each error carries the exit code the CLI returns for it.
"""
from typing import Optional


class DevDietError(Exception):
    """Base class for all errors raised by devdiet"""

    exit_code = 1


class ConfigError(DevDietError):
    """Invalid run configuration or settings (every violation listed)"""

    exit_code = 2

    def __init__(self, message: str, problems: Optional[list] = None):
        self.problems = list(problems or [])
        if self.problems:
            message = message + "\n" + "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(message)


class ScheduleError(DevDietError, ValueError):
    """A diet schedule cannot be constructed"""

    exit_code = 2


class RegistryError(DevDietError, LookupError):
    """Unknown name looked up in a fixed registry"""

    exit_code = 2


class DataError(DevDietError):
    """Missing or unusable dataset"""

    exit_code = 3


class IngestionError(DataError):
    """Malformed manifest or missing file while reading a dataset from disk"""

    def __init__(self, message: str, path=None):
        self.path = path
        if path is not None:
            message = f"{message}: {path}"
        super().__init__(message)


class SamplingError(DataError, ValueError):
    """A clip is too short for the requested frame sampling"""


class DegenerateSceneError(DataError, ValueError):
    """Scene spec with (near) tied arrow and ball distances"""


class NumericError(DevDietError, FloatingPointError):
    """Non-finite values where finite ones are required"""

    exit_code = 4


class DivergenceError(NumericError):
    """Training loss became NaN or infinite"""

    def __init__(self, message: str, last_good_checkpoint=None):
        self.last_good_checkpoint = last_good_checkpoint
        if last_good_checkpoint is not None:
            message = f"{message} (last good checkpoint: {last_good_checkpoint})"
        super().__init__(message)


class MetricError(DevDietError):
    """A metric cannot be computed from the given inputs"""

    exit_code = 5


class UndefinedMetricError(MetricError, ValueError):
    """The metric's denominator is empty or zero"""


class IncompleteGridError(MetricError, LookupError):
    """A (corruption type, severity) cell is missing"""
