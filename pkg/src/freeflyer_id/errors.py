"""Exception hierarchy shared by every stage of the identification toolkit."""


class FreeFlyerError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(FreeFlyerError, ValueError):
    """Non-finite or malformed numeric input."""


class SingularInertiaError(FreeFlyerError):
    """Inertia matrix numerically singular."""


class InconsistentParametersError(FreeFlyerError):
    """Parameter set that cannot describe a physical rigid body."""


class GimbalProximityError(FreeFlyerError):
    """Z-Y-X Euler pitch too close to +/- pi/2."""


class InfeasibleConfigError(FreeFlyerError):
    """No feasible excitation trajectory was found."""


class InvalidWindowError(FreeFlyerError):
    """Reference window too short for the controller horizon."""


class InvalidLogError(FreeFlyerError):
    """Measurement log does not match the expected cycle layout."""


class RankDeficiencyError(FreeFlyerError):
    """Stacked regressor lacks full column rank."""

    def __init__(self, message, singular_values=None):
        super().__init__(message)
        self.singular_values = singular_values


class SelectionFailureError(FreeFlyerError):
    """Every harmonic candidate produced an unphysical estimate."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(FreeFlyerError):
    """Invalid or missing scenario configuration."""

    def __init__(self, message, stage="config"):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class StageError(FreeFlyerError):
    """Numerical failure inside one stage of a scenario run."""

    def __init__(self, message, stage):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
