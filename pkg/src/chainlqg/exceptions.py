"""Exception types shared across the package."""


class ChainLQGError(Exception):
    """Base class for errors raised by this package."""


class ModelError(ChainLQGError, ValueError):
    """A system, weight set, or scenario is malformed or inconsistent."""


class WeightError(ModelError):
    """An assembled cost matrix violates its definiteness contract."""


class AssumptionError(ChainLQGError):
    """A synthesis precondition (stabilizability/detectability) failed.

    The message names the offending pair, e.g. ``"(A22, B2) is not
    stabilizable"``.
    """


class RiccatiDivergenceError(ChainLQGError):
    """The fixed-point Riccati iteration did not converge.

    Attributes
    ----------
    residual : float
        Fixed-point residual at the last iterate.
    iterations : int
        Number of iterations performed.
    """

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = float(residual)
        self.iterations = int(iterations)


class SimulationDivergenceError(ChainLQGError):
    """A closed-loop simulation exceeded the state-norm guard."""


class ConfigError(ChainLQGError, ValueError):
    """A configuration file or CLI argument combination is invalid."""
