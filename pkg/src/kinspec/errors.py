"""Exception hierarchy shared by all kinspec modules.

Two families matter operationally: theorem violations (a proved inequality
fails numerically -- always a bug or a broken discretization, never
acceptable) and calibration misses (a tolerance pinned to slack constants is
exceeded).  The CLI maps them to distinct exit codes.
"""


class KinspecError(Exception):
    """Base class for all package errors."""


class TheoremViolation(KinspecError):
    """A mathematically proved inequality failed numerically (hard failure)."""


class CalibrationMiss(KinspecError):
    """A slack-calibrated tolerance was exceeded (soft failure)."""


# --- linear-operator laboratory -------------------------------------------

class SingularResolvent(KinspecError):
    """(op - z) is rank deficient at working precision."""


class ContourTooClose(KinspecError):
    """An eigenvalue lies too close to the integration circle."""


class NonConvergedQuadrature(KinspecError):
    """Doubling the contour nodes still changes the projector."""


class OverflowRisk(KinspecError):
    """t * (spectral bound) too large for a dense exponential."""


class QuadratureNotConverged(KinspecError):
    """Convolution quadrature did not stagnate under refinement."""


class InsufficientOrder(KinspecError):
    """Composition order n too small for the supplied chain of spaces."""


# --- weights / rate predictions --------------------------------------------

class NotDecaying(KinspecError):
    """Defect weight grows at infinity; weight invalid for the potential."""


# --- Fokker-Planck solvers --------------------------------------------------

class GridTooCoarse(KinspecError):
    """Discrete equilibrium residual exceeds tolerance."""


class EigenSolveFailed(KinspecError):
    pass


class InsufficientTruncation(KinspecError):
    """No (M, R) achieves the pointwise defect inequality."""


class StepRejected(KinspecError):
    """Implicit solve failed during time stepping."""


# --- decay fitting -----------------------------------------------------------

class WindowEmpty(KinspecError):
    """No samples fall in the documented fit window."""


class FitRejected(KinspecError):
    """Fit residual exceeds the acceptance threshold."""


# --- kinetic Fokker-Planck ---------------------------------------------------

class NotMonotone(KinspecError):
    """Hypocoercivity functional increased (epsilon too large)."""

    def __init__(self, msg, t_violation=None):
        super().__init__(msg)
        self.t_violation = t_violation


class BoundViolated(TheoremViolation):
    """A theorem inequality (Povzner, averaging, ...) failed."""


# --- collision kernels -------------------------------------------------------

class EnergyConstraintViolated(KinspecError):
    """Radii do not satisfy r^2 + r_*^2 = r'^2 + r'_*^2."""


class WeightOutOfRange(KinspecError):
    """Weight outside the validity range of the remainder estimates."""


class NegativeInput(KinspecError):
    """Gain-term representation requires nonnegative inputs."""


# --- homogeneous Boltzmann ---------------------------------------------------

class KernelNotResolved(KinspecError):
    """Collision invariants not found in the discrete kernel."""


class StepUnstable(KinspecError):
    """Explicit step violated the collision-frequency CFL rule."""


class ConservationBroken(TheoremViolation):
    """Mass/energy drift above tolerance after conservative correction."""


class EntropyIncreased(TheoremViolation):
    """H-functional increased between recorded steps."""


class LowerBoundMissing(KinspecError):
    """Gaussian lower-bound diagnostic failed (report-only context)."""


class TailNotConvergent(KinspecError):
    """Dissipative-norm tail undefined: measured gap not positive."""


class SchemeDiverged(KinspecError):
    """Perturbative iteration ratio >= 1."""

    def __init__(self, msg, epsilon=None):
        super().__init__(msg)
        self.epsilon = epsilon


# --- experiment runner -------------------------------------------------------

class ConfigInvalid(KinspecError):
    """Experiment config failed validation; carries the offending field path."""

    def __init__(self, msg, field=None):
        super().__init__(msg if field is None else f"{field}: {msg}")
        self.field = field


class ExperimentFailed(KinspecError):
    """First failing acceptance rule of an experiment."""
