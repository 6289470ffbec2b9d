"""Exception hierarchy shared by all stabkit modules."""


class StabkitError(Exception):
    """Base class for every error raised by stabkit."""


class DimensionError(StabkitError, ValueError):
    """Array shapes do not agree."""


class NonFiniteError(StabkitError, ValueError):
    """An input or intermediate quantity contains NaN or inf."""


class GaugeError(StabkitError, ValueError):
    """The gauge ``rho0`` does not lie strictly right of the spectrum."""


class SingularGaugeError(StabkitError, ValueError):
    """``rho0*I - A`` has an eigenvalue on the closed negative real axis."""


class SplitDegenerate(StabkitError):
    """An eigenvalue sits on the split line ``Re(lambda) = -alpha``."""


class ContourTooClose(StabkitError):
    """An eigenvalue lies too close to the integration contour."""


class NotExactlyControllable(StabkitError):
    """The controllability Gramian is numerically singular."""


class ConstantsNotCertified(StabkitError):
    """The weak observability inequality could not be certified."""


class SingularGramian(StabkitError):
    """The weighted Gramian is not positive definite."""


class QuadratureUnderResolved(StabkitError):
    """Richardson comparison of two quadrature levels disagrees."""


class FeedbackNotCertified(StabkitError):
    """A synthesized gain fails its closed-loop decay check."""


class ProjectedPairUncontrollable(StabkitError):
    """The projected pair on the unstable part is not exactly controllable.

    Carries the failing Hautus witness: an eigenvalue ``lam`` of ``A*`` and a
    unit eigenvector ``phi`` with ``B* phi`` numerically zero.
    """

    def __init__(self, message, lam=None, phi=None):
        super().__init__(message)
        self.lam = lam
        self.phi = phi


class BlowUpError(StabkitError):
    """A simulated state became non-finite."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class StageError(StabkitError):
    """Wraps an error raised inside one stage of the stabilization pipeline."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class SystemFormatError(StabkitError, ValueError):
    """A system or mask file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
