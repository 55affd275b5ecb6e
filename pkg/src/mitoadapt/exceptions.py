"""Exception types raised by the mitoadapt package."""


class GeometryError(ValueError):
    """Slice shapes or stack geometries do not agree."""


class LabelError(ValueError):
    """Label values are not binary or do not match their image stack."""


class SplitError(ValueError):
    """A volume cannot be split at the requested column."""


class SamplingError(ValueError):
    """Patch sampling parameters do not fit the stack."""


class ShapeError(ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class SelectionError(ValueError):
    """A checkpoint-selection criterion cannot be evaluated on a trace."""


class ConfigError(ValueError):
    """A training plan or experiment configuration is invalid."""


class TrainingError(RuntimeError):
    """A training run cannot be started or has failed."""


class RegistrationError(ValueError):
    """A dataset (family) cannot be registered with the harness."""
