"""Exception types shared across the package."""


class RotampError(Exception):
    """Base class for all package-specific errors."""


# -- free-probability calculus ----------------------------------------------

class RadiusExceeded(RotampError):
    """Series argument outside the certified convergence radius."""


class OutOfDomain(RotampError):
    """Transform evaluated at a point inside or too close to the support."""


class InverseOutOfRange(RotampError):
    """Requested inverse value is not attained on the monotone branch."""


# -- spectral laws -----------------------------------------------------------

class QuantileUnavailable(RotampError):
    """Law has no usable quantile function for deterministic sampling."""


class TooFewEntries(RotampError):
    """Empirical input shorter than what the computation needs."""


# -- AMP engine ---------------------------------------------------------------

class InsufficientCumulants(RotampError):
    """Fewer cumulants supplied than the iteration count requires."""


class InsufficientCoefficients(RotampError):
    """Partial-moment table too small for the requested block."""


class ShapeMismatch(RotampError):
    """Overlap/derivative ledger matrices have inconsistent shapes."""


class DimensionMismatch(RotampError):
    """Vector length does not match the instance dimensions."""


class NonFiniteIterate(RotampError):
    """AMP iterate diverged (non-finite entries or runaway norm)."""


# -- state evolution ----------------------------------------------------------

class DegenerateNoise(RotampError):
    """Effective noise variance collapsed to zero or below."""


class NoConvergence(RotampError):
    """Fixed-point iteration failed to meet tolerance within the budget."""


class BelowTransition(RotampError):
    """Signal strength below the solvable regime for the requested quantity."""


class QuadratureFailure(RotampError):
    """Numerical integration did not reach the requested accuracy."""


# -- command line -------------------------------------------------------------

class ConfigError(RotampError):
    """Experiment configuration is missing, malformed, or inconsistent."""
