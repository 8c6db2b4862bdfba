"""Multi-resolution hash-encoded field with joint camera pose refinement.

A numpy implementation with hand-written backward passes through volume
rendering, the decoding MLP, the hash encoding and the camera poses, plus a
synthetic-scene harness that checks every gradient against finite
differences and reproduces the component-ablation orderings at desk scale.
"""

__version__ = "0.1.0"

from .decoder import (
    DecoderConfig,
    DecoderParams,
    decoder_backward,
    decoder_forward,
    sinusoidal_encode,
)
from .encoding import (
    EncodingConfig,
    HashTables,
    LevelSpec,
    RAW,
    SMOOTH,
    STRAIGHT_THROUGH,
    analytic_input_jacobian,
    derivative_profile_1d,
    encode,
    encode_backward,
    growth_factor,
    interp_weights,
    resolution_schedule,
    smooth_weights,
    spatial_hash,
)
from .experiment import ExperimentConfig, run_ablation, run_experiment
from .metrics import psnr, ssim
from .pose import (
    Intrinsics,
    Pose,
    Ray,
    Similarity,
    Twist,
    exp_map,
    generate_ray,
    log_map,
    perturb_poses,
    procrustes_align,
    rotation_error,
    translation_error,
)
from .renderer import (
    RayBatch,
    RenderConfig,
    SceneBounds,
    composite,
    render_backward,
    render_batch,
    sample_depths,
)
from .scene import Primitive, SceneDataset, SceneSpec, generate_scene
from .trainer import (
    AdamState,
    CurriculumSchedule,
    TrainConfig,
    adam_step,
    curriculum_weight,
    train,
)

__all__ = [
    "AdamState",
    "CurriculumSchedule",
    "DecoderConfig",
    "DecoderParams",
    "EncodingConfig",
    "ExperimentConfig",
    "HashTables",
    "Intrinsics",
    "LevelSpec",
    "Pose",
    "Primitive",
    "RAW",
    "Ray",
    "RayBatch",
    "RenderConfig",
    "SMOOTH",
    "STRAIGHT_THROUGH",
    "SceneBounds",
    "SceneDataset",
    "SceneSpec",
    "Similarity",
    "TrainConfig",
    "Twist",
    "adam_step",
    "analytic_input_jacobian",
    "composite",
    "curriculum_weight",
    "decoder_backward",
    "decoder_forward",
    "derivative_profile_1d",
    "encode",
    "encode_backward",
    "exp_map",
    "generate_ray",
    "growth_factor",
    "interp_weights",
    "log_map",
    "perturb_poses",
    "procrustes_align",
    "psnr",
    "render_backward",
    "render_batch",
    "resolution_schedule",
    "rotation_error",
    "run_ablation",
    "run_experiment",
    "sample_depths",
    "sinusoidal_encode",
    "smooth_weights",
    "spatial_hash",
    "ssim",
    "train",
    "translation_error",
]
