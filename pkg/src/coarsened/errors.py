"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class CoarsenedError(Exception):
    exit_code = 1
    code = "error"


class ConfigError(CoarsenedError, ValueError):
    """Bad parameters, schema, or command-line usage."""

    exit_code = 2
    code = "config_error"


class DataError(CoarsenedError, ValueError):
    """Input data that cannot be read or violates the data model."""

    exit_code = 3
    code = "data_error"


class NumericError(CoarsenedError, ArithmeticError):
    """Degenerate numerical situations (no estimable strata, singular grids)."""

    exit_code = 4
    code = "numeric_error"


class StratificationWarning(UserWarning):
    pass
