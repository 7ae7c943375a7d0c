class RamaError(Exception):
    exit_code = 1


class ConfigError(RamaError, ValueError):
    exit_code = 2


class DataError(RamaError, ValueError):
    exit_code = 3


class NumericalError(RamaError, ArithmeticError):
    exit_code = 4
