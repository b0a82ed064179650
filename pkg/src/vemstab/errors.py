"""Exception hierarchy shared by all vemstab modules."""


class VemError(Exception):
    """Base class for every error raised by vemstab."""


class InvalidArgument(VemError, ValueError):
    pass


class InvalidGeometry(VemError, ValueError):
    pass


class TriangulationFailure(VemError):
    pass


class CompatibilityError(VemError):
    """Stokes data violate the flux compatibility condition."""


class SolverFailure(VemError):
    pass


class ContinuityError(VemError):
    """Edge polynomials disagree at a shared vertex."""


class DecompositionError(VemError):
    pass


class ConditioningError(VemError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ExpansionError(ConditioningError):
    pass


class AssemblyError(VemError):
    pass


class DeflationError(VemError):
    pass


class CacheError(VemError):
    pass


class ConfigError(InvalidArgument):
    """Invalid experiment configuration (CLI flags or JSON file)."""
