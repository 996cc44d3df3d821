"""Exception types; each maps to a CLI exit code."""


class GroundingError(Exception):
    exit_code = 1


class ConfigError(GroundingError, ValueError):
    exit_code = 2


class DataError(GroundingError, ValueError):
    exit_code = 3


class NumericalError(GroundingError, ArithmeticError):
    exit_code = 4
