"""Exception types raised by the simulator and the certificate engine."""


class NSCHError(Exception):
    """Base class for all package errors."""


class NonConvergence(NSCHError):
    """An iterative linear solve hit its iteration cap."""


class IncompatibleRHS(NSCHError):
    """A pure-Neumann problem was given data with nonzero mean."""


class DomainError(NSCHError, ValueError):
    """Input outside the admissible range (e.g. nonpositive temperature)."""


class PositivityLoss(NSCHError):
    """Temperature lost positivity and step halving did not recover it."""


class GridMismatch(NSCHError, ValueError):
    """Two fields or states live on different grids."""


class TimeMismatch(NSCHError, ValueError):
    """Two trajectories are sampled at different time levels."""


class BudgetExceeded(NSCHError):
    """A dense assembly was requested on a grid that is too large."""


class ConfigError(NSCHError, ValueError):
    """Malformed or out-of-range configuration."""
