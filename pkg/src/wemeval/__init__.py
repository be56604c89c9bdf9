"""Desk-scale evaluation toolkit for multi-turn embodied video rollouts."""

from .features import EmbedderSpec, cosine_similarity, embed_frames, perceptual_distance
from .flow import (
    FlowField,
    Homography,
    MotionProfile,
    estimate_homography,
    flow_stats,
    motion_profile,
    render_camera_flow,
    resample_profile,
    residual_object_flow,
)
from .manifest import load_manifest, save_manifest
from .metrics import MetricConfig, MetricReport, evaluate_all
from .microsim import SimConfig, generate_trajectory, perturb_rollout
from .rollout import (
    Chunk,
    Frame,
    PhaseLabel,
    Trajectory,
    WorldEgoMask,
    phase_boundaries,
    validate_trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "Chunk",
    "EmbedderSpec",
    "FlowField",
    "Frame",
    "Homography",
    "MetricConfig",
    "MetricReport",
    "MotionProfile",
    "PhaseLabel",
    "SimConfig",
    "Trajectory",
    "WorldEgoMask",
    "cosine_similarity",
    "embed_frames",
    "estimate_homography",
    "evaluate_all",
    "flow_stats",
    "generate_trajectory",
    "load_manifest",
    "motion_profile",
    "perceptual_distance",
    "perturb_rollout",
    "phase_boundaries",
    "render_camera_flow",
    "resample_profile",
    "residual_object_flow",
    "save_manifest",
    "validate_trajectory",
]
