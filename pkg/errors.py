import numpy as np


class QpruneError(Exception):
    """Mixin shared by every error this package raises on purpose."""


class TensorFormatError(QpruneError, ValueError):
    pass


class TensorIOError(QpruneError, OSError):
    pass


class ValidationError(QpruneError, ValueError):
    pass


class ShapeError(QpruneError, ValueError):
    pass


class ConfigError(QpruneError, ValueError):
    pass


class EmptyCalibrationError(QpruneError, RuntimeError):
    pass


class SingularMatrixError(QpruneError, np.linalg.LinAlgError):
    pass
