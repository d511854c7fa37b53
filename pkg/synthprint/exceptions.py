"""
Custom exceptions for synthprint.
"""

from pathlib import Path
from typing import Optional, Union


class SynthprintError(Exception):
    """Base exception for synthprint errors."""

    def __init__(self, message: str, details: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.details = details


class ConfigurationError(SynthprintError):
    """Raised when configuration is invalid or cannot be persisted."""
    pass


class ValidationError(SynthprintError):
    """Raised when an argument or domain invariant is violated."""
    pass


class ManifestError(SynthprintError):
    """Raised when a manifest file is malformed or holds duplicate records."""

    def __init__(
        self,
        message: str,
        record_index: Optional[int] = None,
        details: Optional[str] = None
    ):
        super().__init__(message, details)
        self.record_index = record_index


class ImageError(SynthprintError):
    """Raised when an image cannot be read or has the wrong geometry."""

    def __init__(
        self,
        message: str,
        path: Optional[Union[str, Path]] = None,
        details: Optional[str] = None
    ):
        super().__init__(message, details)
        self.path = Path(path) if path is not None else None
