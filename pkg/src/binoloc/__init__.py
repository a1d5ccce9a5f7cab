"""Global localization on a polygon map with a single binary boundary sensor.

The pipeline is: follow the boundary with a two-mode controller, match the
driven path's orientation profile against the map to get a coarse pose, then
refine that pose with a particle filter during a systematic search.
"""

from .geometry import MapError, PolygonMap, load_map
from .motion import LeverArm, MotionNoiseParams, Pose, VelocityCommand

__all__ = [
    "LeverArm",
    "MapError",
    "MotionNoiseParams",
    "PolygonMap",
    "Pose",
    "VelocityCommand",
    "load_map",
]
__version__ = "0.1.0"
