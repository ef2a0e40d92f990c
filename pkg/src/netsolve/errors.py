"""Exception types shared across the package.

The CLI maps these onto exit codes: AssumptionViolation -> 2, every other
NetsolveError -> 1.
"""


class NetsolveError(Exception):
    """Base class for all package errors."""


class ShapeError(NetsolveError):
    """A node field or matrix operand has the wrong shape."""


class NetworkInvalidError(NetsolveError):
    """Network data violates a structural invariant (self-loop, duplicate
    edge, zero-length edge, coordinate outside the domain box)."""


class NetworkDisconnectedError(NetworkInvalidError):
    """The network graph is not connected."""


class ConfigError(NetsolveError):
    """Invalid configuration value, unknown key, or unusable parameter
    combination (for example a mesh width that does not divide the domain)."""


class GenerationError(NetsolveError):
    """The fiber generator could not reach the requested density."""


class AssumptionViolation(NetsolveError):
    """A network assumption needed by the method fails on this input
    (empty mesh element, disconnected audit subgraph, empty scan box)."""


class OperatorSingularError(NetsolveError):
    """An assembled or factored operator is singular: no Dirichlet nodes,
    a singular coarse matrix, or a singular patch block."""


class SolverBreakdownError(NetsolveError):
    """PCG hit a nonpositive inner product; the operator or preconditioner
    is not symmetric positive definite on the free space."""


class EigenSolveError(NetsolveError):
    """The subgraph eigensolver failed to certify its residual tolerance
    within the iteration budget."""


class FileFormatError(NetsolveError):
    """A network file does not conform to the documented text format."""
