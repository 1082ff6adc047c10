"""Exception hierarchy shared by every module."""


class SirError(Exception):
    """Base class for all errors raised by randsir."""


class InvalidParameter(SirError, ValueError):
    """A model parameter, noise bound or configuration value violates its constraints."""


class ConfigError(InvalidParameter):
    """An experiment configuration file could not be parsed or validated."""


class NonFiniteInput(SirError, ValueError):
    """NaN or infinite value handed to a model function."""


class DegeneratePopulation(SirError, ValueError):
    """Total population is zero where the interaction term needs it positive."""


class NotAnEquilibrium(SirError, ValueError):
    """The point handed to an equilibrium routine is not a fixed point."""


class ClassificationDisagreement(SirError, RuntimeError):
    """Eigenvalue and Routh-Hurwitz stability tests disagree."""


class NumericalError(SirError, ArithmeticError):
    """Base class for failures during time stepping."""


class PositivityViolation(NumericalError):
    """A state component left the nonnegative octant beyond roundoff tolerance."""


class NonFiniteState(NumericalError):
    """Integration produced NaN or overflowed."""


class OutOfWindow(NumericalError, IndexError):
    """A noise path was queried outside the window it was generated on."""


class GridOverflow(SirError, MemoryError):
    """Requested noise grid is too large to allocate."""


class NoUnstableDirection(SirError, ValueError):
    """The disease-free equilibrium has no unstable eigendirection."""


class NonConvergence(NumericalError):
    """An iteration or trace did not reach its target before the time limit."""


class NonHyperbolicMatrix(SirError, ValueError):
    """A matrix has an eigenvalue on (or numerically at) the imaginary axis."""
