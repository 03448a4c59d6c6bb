"""
Configuration module for the brain-shift interpolation toolkit
"""

from .config import Config

__all__ = [
    'Config',
]

__version__ = "1.0.0"
