"""Exception hierarchy shared across the package."""


class ImelError(Exception):
    """Base class for all package errors."""


class ConfigError(ImelError, ValueError):
    """Malformed or out-of-range configuration."""


class ShapeError(ImelError, ValueError):
    """Array dimensions do not match what an operation expects."""


class EnvDivergence(ImelError, FloatingPointError):
    """An environment was stepped from a non-finite state."""


class TrainingDivergence(ImelError, FloatingPointError):
    """A loss or gradient became non-finite during optimization."""


class NoImprovementDirection(ImelError):
    """Every advantage-weighted score is zero, so no step size exists."""


class AnnotationError(ImelError):
    """An episode was annotated twice, or used before annotation."""
