"""Exception types shared across the package."""


class ShapeSplineError(Exception):
    """Base class for all package errors."""


class NonFiniteInputError(ShapeSplineError, ValueError):
    """An input array contains NaN or infinity."""


class IntegrationDivergedError(ShapeSplineError, RuntimeError):
    """The state became non-finite during time integration.

    Attributes:
        node: index of the first grid node at which a non-finite value appeared.
    """

    def __init__(self, node: int, message: str | None = None):
        self.node = node
        super().__init__(message or f"integration diverged at grid node {node}")


class MetricDegenerateError(ShapeSplineError, RuntimeError):
    """The control-metric matrix could not be factorized."""


class DegenerateConfigurationError(ShapeSplineError, RuntimeError):
    """A kernel matrix factorization failed even after jitter."""


class ConfigurationError(ShapeSplineError, ValueError):
    """A problem definition is inconsistent (off-grid observation time, bad counts...)."""


class GridMismatchError(ShapeSplineError, ValueError):
    """Two time-sampled objects do not share the same grid."""


class ValidationError(ShapeSplineError, ValueError):
    """A dataset or configuration file failed schema validation.

    Attributes:
        field: dotted path of the offending field, when known.
    """

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(message if field is None else f"{field}: {message}")
