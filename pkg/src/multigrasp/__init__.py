"""Multi-type grasp detection for a three-finger adaptive gripper.

One network scores a grasp pose for every gripper preset at once; the rest
of the package supplies the point-cloud tooling, candidate proposal, a
geometric grasp oracle for labels, and experiment harnesses.
"""
from .errors import GraspError
from .geometry import PointCloud, RigidTransform, SpatialIndex
from .gripper import ALL_TYPES, GraspType, GripperConfig
from .candidates import GraspCandidate, generate, prune
from .encoding import GraspEncoding, encode
from .network import EvaluatorModel, NetConfig, TrainConfig, desk_config, load_model, save_model
from .pipeline import GraspDecision, detect, evaluate_split, run_trial

__version__ = "0.1.0"
