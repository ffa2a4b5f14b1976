"""Exception and warning types raised across the package."""


class FFEDError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInterval(FFEDError, ValueError):
    pass


class DegenerateBasis(FFEDError):
    """Generators are linearly dependent (or numerically so)."""


class SingularNodeMatrix(FFEDError):
    """The interpolation matrix built from the nodes is singular."""


class SingularMatrix(FFEDError):
    pass


class SingularMetric(SingularMatrix):
    """The metric G(y) could not be factorized at some evaluation point."""


class NonConvergence(FFEDError):
    """A stage iteration hit its iteration cap without meeting the tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class NonConvergenceWarning(RuntimeWarning):
    pass


class Overflow(FFEDError, FloatingPointError):
    pass


class OracleSelfConsistencyFailure(FFEDError):
    """The reference solution moved too much when its step was halved."""


class StepFailure(FFEDError):
    """Wraps an error raised inside a step of a trajectory."""

    def __init__(self, step_index, t, cause):
        super().__init__(f"step {step_index} at t={t:.17g} failed: {cause}")
        self.step_index = step_index
        self.t = t
        self.cause = cause
