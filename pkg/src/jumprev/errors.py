"""Exception types shared across the package.

Mathematical precondition failures are distinct from config/IO errors so the
CLI can map them to exit codes (2 = config, 3 = precondition, 4 = verdict).
"""


class ConfigError(ValueError):
    """Invalid configuration document or CLI arguments."""


class IntensityBoundExceeded(RuntimeError):
    """Thinning majorant violated at a candidate time; the local bound
    heuristic failed and continuing would bias the sample."""


class ExplosionDetected(RuntimeError):
    """A path exceeded the configured maximum number of jumps."""


class NonfiniteState(RuntimeError):
    """The drift flow left the bounding box by more than the allowed margin,
    or produced a non-finite coordinate."""


class TimeOutOfRange(ValueError):
    """Requested evaluation time outside [0, T]."""


class NegativeProbability(RuntimeError):
    """Master-equation integration produced negative mass beyond tolerance."""


class EmptyEnsemble(ValueError):
    """Operation requires at least one path."""


class AbsoluteContinuityViolation(RuntimeError):
    """Incoming flux lands on zero-mass states: the flux equation has no
    solution there (numerical counterpart of I_q(sigma) << q failing)."""

    def __init__(self, message, offenders=()):
        super().__init__(message)
        # list of (time, state_label, orphan_mass)
        self.offenders = list(offenders)


class QuadratureDivergence(RuntimeError):
    """A kernel integral required by the operation does not converge on the
    dyadic probe quadrature."""


class DriftCorrectionDivergence(QuadratureDivergence):
    """The truncated first moment of (j - 1) against the reference kernel
    diverges, so the tilted drift is undefined."""


class BinMismatch(ValueError):
    """Estimate and theoretical kernel use incompatible binnings."""
