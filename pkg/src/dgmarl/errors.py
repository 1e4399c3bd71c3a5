"""Shared exception types with a stable CLI exit-code mapping."""


class DgmarlError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(DgmarlError):
    """Invalid configuration: bad shapes, unknown fields, unparsable files."""

    exit_code = 2


class UsageError(DgmarlError):
    """An operation was called outside its contract (bad ids, empty buffers, ...)."""

    exit_code = 2


class ConnectivityError(DgmarlError):
    """The communication graph violates the connected-graph assumption."""

    exit_code = 3


class CheckpointError(DgmarlError):
    """Missing or corrupt checkpoint data."""

    exit_code = 4
