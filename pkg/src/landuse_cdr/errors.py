"""Exception types shared across the pipeline stages."""


class LandUseError(Exception):
    """Base class for all package errors."""


class ConfigError(LandUseError, ValueError):
    """Invalid configuration value or parameter combination."""


class GeometryError(LandUseError, ValueError):
    """A zoning polygon failed validation on load."""

    def __init__(self, index, reason):
        self.index = index
        self.reason = reason
        super().__init__(f"polygon {index}: {reason}")


class ConsistencyError(LandUseError, RuntimeError):
    """Two inputs that must describe the same cells do not."""


class IngestError(LandUseError):
    """Too many unreadable event rows."""
