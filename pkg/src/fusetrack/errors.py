"""Shared exception types."""


class ConfigError(ValueError):
    """A configuration is inconsistent with itself or with the data."""


class CheckpointError(RuntimeError):
    """A checkpoint failed validation (checksum, shape table, format)."""
