"""Exception types shared across the package."""

from __future__ import annotations


class ConfigError(ValueError):
    """A configuration value violates its documented bounds."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DataError(ValueError):
    """Input data is malformed or non-finite."""


class ShapeError(ValueError):
    """Array dimensions do not match the model or task."""


class CompletenessError(ValueError):
    """A required dataset or class is missing."""


class LabelError(ValueError):
    """A label is outside the declared class order."""


class StateError(RuntimeError):
    """An operation was called on an object that is not ready for it."""


class QualityGateError(RuntimeError):
    """A trained model failed a quality threshold."""
