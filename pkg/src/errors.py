class InputError(ValueError):
    """Malformed input: unknown element, bad parameters, broken precondition."""


class ConfigError(ValueError):
    """Invalid experiment or policy configuration."""


class RefusalError(RuntimeError):
    """An exhaustive computation was asked for on an instance that is too large."""


class OracleError(RuntimeError):
    """An internal invariant failed; points at a bug in an oracle."""
