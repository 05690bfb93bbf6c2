"""Error taxonomy shared across the package.

The CLI maps these onto distinct exit codes: configuration problems,
data/file problems, and everything else.
"""


class ConfigError(ValueError):
    """Bad or inconsistent run configuration."""


class DataError(ValueError):
    """Malformed or missing input data."""


class ContractError(RuntimeError):
    """An operation was invoked outside its stated preconditions."""
