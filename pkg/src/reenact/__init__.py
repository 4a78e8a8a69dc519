"""Portrait reenactment on file-based RGB-D sequences.

Builds a rigged, video-textured actor proxy from a calibration sequence,
tracks a source actor's face/torso/gaze, transfers the motion, and composites
output frames. A built-in synthetic renderer provides ground truth for tests.
"""

from .camera import CameraIntrinsics, compute_normals, project, unproject
from .geometry import RigidTransform, TriMesh
from .sequence import RGBDFrame, SequenceStore

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "RigidTransform",
    "TriMesh",
    "RGBDFrame",
    "SequenceStore",
    "project",
    "unproject",
    "compute_normals",
    "__version__",
]
