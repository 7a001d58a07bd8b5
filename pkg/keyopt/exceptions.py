"""
Error kinds raised by the keypoint toolkit.

Everything derives from KeyoptError so the command layer can map a failure
during work to a runtime exit code with one except clause.
"""


class KeyoptError(Exception):
    """Base class for toolkit failures."""


# ------------------- Point clouds and objects -------------------

class CloudReadError(KeyoptError, OSError):
    """The point cloud file could not be opened or read."""


class MalformedHeaderError(KeyoptError, ValueError):
    """The file does not parse under the stated format."""


class EmptyCloudError(KeyoptError, ValueError):
    def __init__(self, message="empty cloud"):
        super().__init__(message)


class ZeroDiameterError(KeyoptError, ValueError):
    def __init__(self, message="zero diameter"):
        super().__init__(message)


class InvalidShapeError(KeyoptError, ValueError):
    """Bad synthetic object parameters or array shapes."""


class InvalidTransformError(KeyoptError, ValueError):
    """Rotation is not orthonormal with determinant +1."""


# ------------------- Keypoints and votes -------------------

class InvalidKeypointsError(KeyoptError, ValueError):
    """Keypoint set violates count, finiteness or separation rules."""


class CoincidentVoteError(KeyoptError, ValueError):
    """A surface point coincides with a keypoint so its direction vote is undefined."""

    def __init__(self, point_index, keypoint_index):
        self.point_index = point_index
        self.keypoint_index = keypoint_index
        super().__init__(
            f"surface point {point_index} coincides with keypoint {keypoint_index}; "
            "direction vote is undefined"
        )


class InvalidProjectionError(KeyoptError, ValueError):
    """A scalarization direction is not a unit vector."""


class BinMismatchError(KeyoptError, ValueError):
    """Two histograms do not share bin edges."""


# ------------------- Optimization -------------------

class InvalidConfigError(KeyoptError, ValueError):
    """Loss, optimizer or noise parameters out of range."""


class NonFiniteLossError(KeyoptError, ArithmeticError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, index, where="step"):
        self.index = index
        self.where = where
        super().__init__(f"non-finite loss at {where} {index}")


class UnsupportedGradientError(KeyoptError, ValueError):
    """The selected similarity has no analytic keypoint gradient."""


class CheckpointError(KeyoptError, ValueError):
    """An encoder checkpoint is unreadable or has the wrong version."""


# ------------------- Pose recovery -------------------

class DegenerateSystemError(KeyoptError, ArithmeticError):
    """Rank-deficient recovery or alignment problem."""
