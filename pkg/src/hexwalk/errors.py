"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes, so every failure raised from library
code should be one of the classes below.
"""


class HexwalkError(Exception):
    """Base class for library errors."""


class DomainError(HexwalkError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class SizeError(HexwalkError, ValueError):
    """A box is too small for the requested probe or containment fails."""


class ContractError(HexwalkError, ValueError):
    """Inputs violate a structural precondition (shape, unitarity, basis)."""


class InputError(HexwalkError, ValueError):
    """Malformed user input such as a coin literal or a path file."""


class PathError(HexwalkError, ValueError):
    """Invalid scattering path (non-adjacent waypoints, not relevant, ...)."""


class FitError(HexwalkError, RuntimeError):
    """Not enough usable data points for a decay fit."""


class NumericalError(HexwalkError, RuntimeError):
    """A numerical contract (residual, norm drift, boundary guard) failed."""
