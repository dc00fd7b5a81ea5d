"""Exception hierarchy shared by all modules."""


class BcharError(Exception):
    """Base class for every error raised by this package."""


class MeshError(BcharError, ValueError):
    pass


class PackingError(BcharError, ValueError):
    pass


class TrackingError(BcharError):
    pass


class VoidError(BcharError):
    """Raised when tracked balls miss every resident ball, or a resident cell gets no mass.

    Remedies are modelling choices (more balls per cell, a smaller time step),
    so this is never fixed silently.
    """


class OptimizerError(BcharError):
    pass


class InfeasibleError(OptimizerError):
    """No correction within the bounds exists for the current matrix."""


class ConfigError(BcharError, ValueError):
    pass
