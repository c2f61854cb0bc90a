"""Custom exceptions."""


class TubeBandError(Exception):
    """Base exception for tubeband."""

    pass


class ContractError(TubeBandError):
    """Caller violated a documented precondition or contract."""

    pass


class DomainError(ContractError):
    """Argument outside the domain of an operation."""

    pass


class UnsupportedError(ContractError):
    """Requested variant is not supported (e.g. second derivative of a linear spline)."""

    pass


class PreconditionError(ContractError):
    """Operation called without a required input."""

    pass


class ConfigError(ContractError):
    """Run configuration could not be read or is inconsistent."""

    pass


class NumericalError(TubeBandError):
    """Numerical failure during a computation."""

    pass


class SingularDesignError(NumericalError):
    """Design matrix does not have full column rank."""

    def __init__(self, rank: int, expected: int) -> None:
        self.rank = rank
        self.expected = expected
        super().__init__(f"Singular design: rank {rank} < {expected} basis functions")


class FactorizationError(NumericalError):
    """Matrix is not symmetric positive definite."""

    pass


class DegenerateCurveError(NumericalError):
    """Normalized basis curve is undefined or violates injectivity."""

    pass


class StationaryPointError(NumericalError):
    """Curve velocity vanishes where curvature is requested."""

    pass


class SolverError(NumericalError):
    """Root finder could not bracket or converge."""

    pass
