"""Exception types shared across the package."""


class QosDeployError(Exception):
    """Base class for all package-specific errors."""


class ScenarioError(QosDeployError):
    """Scenario file or configuration is invalid (CLI exit code 2)."""


class NumericalError(QosDeployError):
    """A numerical procedure failed or diverged (CLI exit code 3)."""


class SpeedSingularityError(NumericalError):
    """Unicycle speed crossed below the compensator singularity guard."""

    def __init__(self, message, min_speed=None, at_time=None):
        super().__init__(message)
        self.min_speed = min_speed
        self.at_time = at_time
