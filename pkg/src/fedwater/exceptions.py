"""Exception hierarchy; the CLI maps each class to a stable exit code."""


class FedWaterError(Exception):
    exit_code = 1


class DataError(FedWaterError, ValueError):
    """Input data or artifact could not be parsed or violates a precondition."""

    exit_code = 2


class NumericalError(FedWaterError, ArithmeticError):
    """Training produced non-finite weights or an undefined quantity."""

    exit_code = 3


class NoEligibleClientsError(DataError):
    pass
