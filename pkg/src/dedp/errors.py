"""Exception types raised by the DEDP toolkit."""


class DedpError(Exception):
    """Base class for all library errors."""


class ConfigError(DedpError, ValueError):
    """Malformed model, policy or scenario configuration."""


class RateOverflow(DedpError, ArithmeticError):
    """Total event rate exceeds one, so the unit-step categorical draw is invalid."""


class DomainViolation(DedpError, ValueError):
    """A state left its finite component domain."""


class SpaceTooLarge(DedpError):
    """Enumeration would exceed the configured cap."""


class NegativeReward(DedpError, ValueError):
    """A reward table holds negative entries where non-negativity is required."""


class NonConvergence(DedpError, RuntimeError):
    """Message passing stopped at ``max_iters`` above tolerance.

    The partially converged result is attached as ``result``.
    """

    def __init__(self, message, result=None, residual=float("nan")):
        super().__init__(message)
        self.result = result
        self.residual = residual


class DivisionDomain(DedpError, ZeroDivisionError):
    """A zero rate coefficient carries positive event mass in the gradient."""


class LineSearchFailed(DedpError, RuntimeError):
    """Backtracking could not find a non-decreasing step."""
