from __future__ import annotations


class SdeCalError(Exception):
    """Base class for all package errors."""


class ValidationError(SdeCalError, ValueError):
    pass


class BlowupError(SdeCalError, ArithmeticError):
    """A state or multiplier left the finite/bounded range.

    ``mu`` is the realization index and ``nu`` the time index of the first
    offending entry; ``iteration`` is attached by the optimizer.
    """

    kind = "numerical"

    def __init__(self, mu: int, nu: int, iteration: int | None = None):
        self.mu = int(mu)
        self.nu = int(nu)
        self.iteration = iteration
        msg = f"{self.kind} blow-up at realization mu={self.mu}, step nu={self.nu}"
        if iteration is not None:
            msg += f" (optimizer iteration {iteration})"
        super().__init__(msg)

    def with_iteration(self, iteration: int) -> "BlowupError":
        return type(self)(self.mu, self.nu, iteration)


class IntegrationBlowupError(BlowupError):
    kind = "integration"


class AdjointBlowupError(BlowupError):
    kind = "adjoint"


class DegenerateVarianceError(SdeCalError, ArithmeticError):
    pass


class InfeasibleTargetError(SdeCalError, ValueError):
    pass
