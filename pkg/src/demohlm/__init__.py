"""Single-demonstration data synthesis and chunked behavior cloning for a kinematic humanoid."""

from .evaluation import closed_loop_eval
from .policy import ChunkedMLPPolicy
from .se3 import Pose, compose, interpolate, inverse, relative_right
from .synthesis import EpisodeGenerator

__version__ = "0.1.0"

__all__ = [
    "ChunkedMLPPolicy",
    "EpisodeGenerator",
    "Pose",
    "closed_loop_eval",
    "compose",
    "interpolate",
    "inverse",
    "relative_right",
]
