"""Exception hierarchy shared by every synccert module."""


class SyncCertError(Exception):
    """Base class for all errors raised by synccert."""


class MalformedGraphError(SyncCertError, ValueError):
    pass


class AmbiguousNullSpaceError(SyncCertError):
    """The left null space of the Laplacian has dimension greater than one."""

    def __init__(self, dimension: int):
        self.dimension = dimension
        super().__init__(
            f"left null space of L has dimension {dimension}; "
            "no distinguished left eigenvector (graph has several root components)"
        )


class AlgebraicLoopError(SyncCertError):
    """I + dL is singular, so the feedthrough interconnection is ill-posed."""

    def __init__(self, d: float, smallest_sv: float):
        self.d = d
        self.smallest_sv = smallest_sv
        super().__init__(
            f"algebraic-loop singularity: I + d*L is singular for d={d!r} "
            f"(-1/d is an eigenvalue of L; smallest singular value {smallest_sv:.3e})"
        )


class EigensolverError(SyncCertError, ArithmeticError):
    pass


class InconsistentLaplacianError(SyncCertError):
    pass


class CertificateInfeasibleError(SyncCertError):
    pass


class NonCoprimeError(SyncCertError):
    """The realization is not minimal, so n(s)/d(s) is not a coprime factorization."""


class InternalConsistencyError(SyncCertError):
    pass


class SpecError(SyncCertError, ValueError):
    """Problem-spec file could not be parsed or validated."""
