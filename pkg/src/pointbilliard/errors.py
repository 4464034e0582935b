"""Exception types shared across the package.

Validation errors mean the caller handed us an inconsistent configuration;
numerical errors mean a computation could not be completed reliably.  The
command line maps the two families onto distinct exit codes.
"""


class PointBilliardError(Exception):
    """Base class for all package errors."""


class ValidationError(PointBilliardError, ValueError):
    """A configuration or argument violates a documented precondition."""


class PoleProximityError(PointBilliardError):
    """An evaluation point sits inside the exclusion band around a pole."""

    def __init__(self, omega, pole_energy, pole_index, width):
        self.omega = omega
        self.pole_energy = pole_energy
        self.pole_index = pole_index
        self.width = width
        super().__init__(
            f"omega={omega!r} is within {width:.3e} of the unperturbed level "
            f"{pole_energy!r} (rank {pole_index}); move the evaluation point or "
            f"shrink the exclusion band explicitly"
        )


class RootBracketError(PointBilliardError):
    """A guaranteed sign change could not be established inside a gap."""


class IllConditionedExtensionError(PointBilliardError):
    """The boundary-condition matrix is numerically singular."""
