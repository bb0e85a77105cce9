"""Exception types shared across the pipeline."""


class SegGraphError(Exception):
    """Base class for all pipeline errors."""


class DegenerateGeometryError(SegGraphError):
    """Input geometry cannot be processed (zero-size cloud, zero normal, ...)."""


class ProjectionSingularError(SegGraphError):
    """Point coincides with the camera center."""


class ConfigurationError(SegGraphError):
    """Mismatched or missing artifacts / invalid configuration."""


class ShapeMismatchError(SegGraphError):
    """Tensor operands have incompatible shapes."""


class GraphIndexError(SegGraphError):
    """Edge references a node outside the graph."""


class EmptyGroupError(SegGraphError):
    """A segmented reduction was handed an empty group."""


class MetricUndefinedError(SegGraphError):
    """Evaluation requested on an input with no valid points."""


class NonFiniteGradientError(SegGraphError):
    """An optimizer step saw a NaN or infinite gradient."""


class ContainerFormatError(SegGraphError):
    """Blob or manifest violates the on-disk container schema."""
