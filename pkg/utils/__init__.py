"""
Utility modules for the brain-shift interpolation toolkit
"""

from .logger import Logger, get_logger, log_performance, StageTimer
from .helpers import FileHelper, JSONHelper, SeedHelper, ParallelHelper
from .errors import (
    BrainShiftError, ValidationError, GridMismatchError, DegenerateConfigurationError,
    InsufficientDataError, ConfigError, FormatError, TrainingError
)

__all__ = [
    'Logger',
    'get_logger',
    'log_performance',
    'StageTimer',
    'FileHelper',
    'JSONHelper',
    'SeedHelper',
    'ParallelHelper',
    'BrainShiftError',
    'ValidationError',
    'GridMismatchError',
    'DegenerateConfigurationError',
    'InsufficientDataError',
    'ConfigError',
    'FormatError',
    'TrainingError',
]
