"""Exception hierarchy shared across the pipeline."""


class ReenactError(Exception):
    """Base class for all errors raised by this package."""


class BehindCameraError(ReenactError):
    """Point with non-positive depth cannot be projected."""


class InsufficientCorrespondences(ReenactError):
    """ICP found fewer than the minimum number of valid correspondences."""


class DegenerateNormalMatrix(ReenactError):
    """The 6x6 ICP normal-equation system is numerically singular."""


class TrackingError(ReenactError):
    """Per-frame tracking failure; carries the frame index."""

    def __init__(self, message, frame_index=None):
        super().__init__(message)
        self.frame_index = frame_index


class EmptyVolumeError(ReenactError):
    """TSDF volume has no zero crossing to extract."""


class NoForegroundComponent(ReenactError):
    """Depth-proxy construction found no foreground component."""


class NoCorrespondencesError(ReenactError):
    """Dense alignment active set is empty after pruning."""


class TransferCoverageError(ReenactError):
    """Blendshape transfer covered too few proxy vertices."""


class MarkerDegenerateError(ReenactError):
    """Body fit markers are collinear or otherwise degenerate."""


class DegenerateEyeCorners(ReenactError):
    """Eye corner landmarks coincide; gaze ratio undefined."""


class MissingSeedsError(ReenactError):
    """Graph-cut slice lacks confident foreground or background seeds."""


class NoWarpSupportError(ReenactError):
    """Warp field extension was asked to fill an all-invalid field."""


class OpenBoundaryError(ReenactError):
    """Poisson blend region touches the image border."""


class ConfigError(ReenactError):
    """Invalid or unknown configuration value."""


class ScenarioError(ReenactError):
    """Invalid synthetic scenario description."""


class StageError(ReenactError):
    """Pipeline stage failure annotated with stage name and frame index."""

    def __init__(self, stage, message, frame_index=None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.frame_index = frame_index
