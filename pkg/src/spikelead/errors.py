class SpikeleadError(Exception):
    exit_code = 2


class DataError(SpikeleadError):
    """Input data is malformed or inconsistent with the declared configuration."""

    exit_code = 2


class DependencyError(SpikeleadError):
    """An upstream pipeline artifact is missing or stale."""

    exit_code = 3


class UsageError(SpikeleadError):
    exit_code = 1
