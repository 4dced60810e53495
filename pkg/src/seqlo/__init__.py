"""Sequential LiDAR odometry: hierarchical point-feature matching with
temporal reuse (pose-seeded initialization, hidden-state relay, pyramid
cache) trained end to end on three-frame windows."""

from .config import Config, desk, full, load_config, toy
from .geometry import Quaternion, RigidTransform
from .model import OdometryModel
from .pyramid import Frame
from .sequencer import estimate_pair, run_sequence, train_window
from .trainer import train

__all__ = [
    "Config", "desk", "full", "load_config", "toy",
    "Quaternion", "RigidTransform",
    "OdometryModel", "Frame",
    "estimate_pair", "run_sequence", "train_window", "train",
]

__version__ = "0.1.0"
