"""Exception types shared across the package.

The command line maps these onto process exit codes: configuration and
format problems exit with 2, meshes that fail validity checks exit with 3,
and iterative-solver breakdowns exit with 4.
"""


class MetraError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MetraError):
    """Invalid option value or inconsistent configuration."""


class MeshFormatError(ConfigurationError):
    """Mesh or metric file violates the documented schema."""


class MeshIntegrityError(MetraError):
    """Connectivity is inconsistent, e.g. shared entities disagree."""


class InvalidMeshError(MetraError):
    """Mesh contains numerically invalid (non-positive) elements."""

    def __init__(self, message, elements=()):
        super().__init__(message)
        self.elements = tuple(elements)


class SingularMetricError(MetraError):
    """Metric tensor is not symmetric positive definite."""


class OutOfDomainError(MetraError):
    """Query point lies outside the background mesh."""


class SolverError(MetraError):
    """An iterative solver failed to reach its tolerance."""
