"""
Error types shared across the lab.

Library code raises these; only the CLI turns them into exit codes.
"""
from typing import Optional


class DecapLabError(Exception):
    """Base class for every error raised by the lab"""


class ConfigError(DecapLabError, ValueError):
    """Invalid run configuration, CLI input or missing artifact (exit code 2)"""


class ModelValidationError(ConfigError):
    """A robot model file is incomplete or violates an invariant"""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class SimulationError(DecapLabError, ValueError):
    """Non-finite state, bad time step or mismatched input to the simulator"""


class DatasetError(DecapLabError, ValueError):
    """Malformed, truncated or incompatible imitation dataset"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        super().__init__(message)
        self.line_number = line_number


class TrainingError(DecapLabError):
    """Optimization diverged (non-finite loss or parameters)"""
