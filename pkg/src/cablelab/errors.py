"""Exception types shared across the package."""


class CablelabError(Exception):
    """Base class for all package errors."""


class InvalidArgument(CablelabError, ValueError):
    """An argument violates a documented precondition."""


class ReducibleChain(CablelabError):
    """A rate matrix has more than one stationary distribution."""


class InconsistentRHS(CablelabError):
    """A Poisson right-hand side is not centered under the stationary measure."""


class MajorantViolation(CablelabError):
    """The total jump rate exceeded the declared thinning majorant."""


class ReplicationFailure(CablelabError):
    """A Monte Carlo replication raised; carries the failing (eps, N, rep)."""

    def __init__(self, eps, N, rep, cause):
        self.eps, self.N, self.rep, self.cause = eps, N, rep, cause
        super().__init__(f"replication failed at eps={eps!r} N={N} rep={rep}: {cause}")

    def __reduce__(self):
        return type(self), (self.eps, self.N, self.rep, self.cause)
