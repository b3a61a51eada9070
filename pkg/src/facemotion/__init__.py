"""Parametric face-motion engine: blendshape rig, keypoint transforms,
expression editing, keypoint tracking, region-aware warping and metrics."""

from facemotion.errors import (
    DomainError,
    GeometryError,
    NumericError,
    ParameterError,
    RankError,
)
from facemotion.rig import (
    FlameParams,
    JointSpec,
    RigDefinition,
    flame_forward,
    keypoints_canonical,
    keypoints_expression,
    keypoints_full,
    make_synthetic_rig,
)
from facemotion.motion import (
    MotionDescriptor,
    RigidFit,
    animate,
    delta_leakage,
    descriptor_from_params,
    edit_enhance,
    edit_replace,
    procrustes_fit,
    rotation_from_euler,
    transform_liveportrait,
    transform_recast,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "GeometryError",
    "NumericError",
    "ParameterError",
    "RankError",
    "FlameParams",
    "JointSpec",
    "RigDefinition",
    "flame_forward",
    "keypoints_canonical",
    "keypoints_expression",
    "keypoints_full",
    "make_synthetic_rig",
    "MotionDescriptor",
    "RigidFit",
    "animate",
    "delta_leakage",
    "descriptor_from_params",
    "edit_enhance",
    "edit_replace",
    "procrustes_fit",
    "rotation_from_euler",
    "transform_liveportrait",
    "transform_recast",
]
