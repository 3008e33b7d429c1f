"""Exception types raised across the calibration toolkit.

Every failure mode exposed to callers gets its own class so the CLI can map
it to a stable machine-readable error class on stderr.
"""


class CalibrationError(Exception):
    """Base class for all toolkit errors."""

    @property
    def error_class(self) -> str:
        return type(self).__name__


class GeometryDomainError(CalibrationError):
    """Input outside an operation's mathematical domain (e.g. log at angle pi)."""


class BehindCameraError(CalibrationError):
    """A 3D point required in front of the camera has non-positive depth."""


class DegenerateGeometryError(CalibrationError):
    """Triangulation system is rank deficient (observation on the baseline)."""


class InsufficientPointsError(CalibrationError):
    """Too few correspondences for the requested estimator."""


class CollinearPointsError(CalibrationError):
    """Object points are collinear; pose is not uniquely determined."""


class AllBehindCameraError(CalibrationError):
    """Every pose candidate places object points behind the camera."""


class NearParallelBundleError(CalibrationError):
    """Line bundle too close to parallel for a stable intersection estimate."""


class NoConsensusError(CalibrationError):
    """Robust estimation discarded too many samples to continue."""


class DegenerateConfigurationError(CalibrationError):
    """Point cloud configuration does not determine a rigid alignment."""


class FrustumViolationError(CalibrationError):
    """A simulated trajectory drove every keypoint outside the image."""


class TooFewInliersError(CalibrationError):
    """Fewer frames survived screening than the pipeline needs."""


class MissingObservationError(CalibrationError):
    """An evaluation frame lacks the observation needed for a metric."""


class ConfigError(CalibrationError):
    """Invalid or inconsistent configuration document."""
