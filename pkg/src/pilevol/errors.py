"""Exception hierarchy shared across the package."""


class PilevolError(Exception):
    """Base class for all domain errors raised by this package."""


class InvalidCovarianceError(PilevolError):
    """Covariance matrix violates symmetry/positivity requirements."""


class InsufficientFeaturesError(PilevolError):
    """Too few detections or visible features to determine a pose."""


class SingularGeometryError(PilevolError):
    """Feature geometry is degenerate; the normal equations are ill-conditioned."""


class ConvergenceError(PilevolError):
    """Iterative solver failed to converge within its iteration cap."""


class OutOfRangeError(PilevolError):
    """Sensor reading outside the valid measurement window."""


class DomainError(PilevolError):
    """Point or query outside the domain of interest."""


class InfeasibleCandidateError(PilevolError):
    """Planner candidate is not in the feasible set."""


class NoFeasibleCandidateError(PilevolError):
    """No planner candidate satisfies the feasibility constraints."""


class CampaignAbortedError(PilevolError):
    """Campaign stopped early, e.g. after repeated localization failures."""


class ConfigError(PilevolError):
    """Invalid or inconsistent configuration values."""
