"""Exception hierarchy shared across the solver modules."""


class FemMpmError(Exception):
    """Base class for all solver errors."""


class ConfigError(FemMpmError):
    """Invalid or inconsistent scenario configuration."""


class MeshError(FemMpmError):
    """Degenerate or inconsistent mesh data."""


class InitializationError(FemMpmError):
    """Geostatic relaxation failed to converge."""


class ConstitutiveError(FemMpmError):
    """Stress update failed; carries the offending element/particle id."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class TransferError(FemMpmError):
    """State transfer could not be completed."""


class EntanglementError(TransferError):
    """Mesh contains inverted elements; transfer refused."""

    def __init__(self, message, elements=None, time=None):
        super().__init__(message)
        self.elements = list(elements) if elements is not None else []
        self.time = time


class OutOfDomainError(FemMpmError):
    """A material point left the background grid."""

    def __init__(self, message, particle=None):
        super().__init__(message)
        self.particle = particle


class DivergenceError(FemMpmError):
    """Non-finite kinematics encountered during time stepping."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time
