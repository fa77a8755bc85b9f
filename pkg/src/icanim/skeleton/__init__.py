"""Pose data model, augmentation, rasterization and procedural motion."""

from .augment import AugmentConfig, augment_pose, normalize_group, normalize_to_bbox, scale_bone_lengths
from .io import load_pose, load_poses, save_pose
from .motion import FAMILIES, MotionSpec, synth_motion
from .raster import SKELETON_STYLE, RenderStyle, rasterize
from .sprites import Character, random_character, render_character
from .topology import (
    BODY18,
    PoseFrame,
    PoseSequence,
    SkeletonTopology,
    load_topology,
    save_topology,
    validate_sequence,
)

__all__ = [
    "AugmentConfig", "augment_pose", "normalize_group", "normalize_to_bbox", "scale_bone_lengths",
    "load_pose", "load_poses", "save_pose",
    "FAMILIES", "MotionSpec", "synth_motion",
    "SKELETON_STYLE", "RenderStyle", "rasterize",
    "Character", "random_character", "render_character",
    "BODY18", "PoseFrame", "PoseSequence", "SkeletonTopology",
    "load_topology", "save_topology", "validate_sequence",
]
