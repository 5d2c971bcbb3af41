"""Exception hierarchy.

Every failure raised by the library derives from :class:`RelaxationError`, so
callers can catch one type at the CLI boundary.
"""


class RelaxationError(Exception):
    """Base class for all library errors."""


# problem definition / assumption checks
class NonFiniteCallback(RelaxationError):
    pass


class CoercivityViolation(RelaxationError):
    pass


class RecessionMismatch(RelaxationError):
    pass


# relaxed integrand checks
class HomogeneityViolation(RelaxationError):
    pass


class ConvexityViolation(RelaxationError):
    pass


# trajectories
class NonFiniteState(RelaxationError):
    pass


class DegeneratePath(RelaxationError):
    pass


class NonMonotonePhi(RelaxationError):
    pass


# solver
class NonFiniteEnergy(RelaxationError):
    pass


class InfeasibleTimeBudget(RelaxationError):
    pass


class MaxItersExceeded(RelaxationError):
    """Raised only when the caller asks for strict convergence.

    By default solvers return their best iterate with ``converged=False``.
    """


class BoundViolation(RelaxationError):
    def __init__(self, bound, value, limit):
        super().__init__(f"bound '{bound}' violated: {value!r} > {limit!r}")
        self.bound = bound
        self.value = value
        self.limit = limit


class NotNormalized(RelaxationError):
    pass


# measures
class MeanMismatch(RelaxationError):
    pass


class ConfigError(RelaxationError):
    pass
