"""Self-supervised intensity-event stereo matching, implemented as explicit
numpy numerics: event simulation, leaky log-intensity reconstruction,
gradient-structure cost volumes, and loss-driven disparity refinement.
"""

from .events import (
    Event,
    EventFormatError,
    EventStream,
    VoxelGrid,
    parse_events,
    voxelize,
    write_events,
)
from .imageops import (
    Image,
    DisparityMap,
    GradientField,
    gradient,
    occlusion_mask,
    project_disparity,
    warp_by_disparity,
    warp_events,
)
from .reconstruct import ReconstructionConfig, integrate_events, integrate_events_raw
from .simulate import SimulatorConfig, simulate_events
from .scenes import ScenePlane, SceneSpec, StereoScene, render_scene, standard_scene
from .losses import (
    LossReport,
    LossWeights,
    cross_consistency_loss,
    gradient_structure_loss,
    internal_disparity_loss,
    loss_landscape,
    smoothness_loss,
    total_loss,
    weighted_total,
)
from .stereo import (
    CostVolume,
    FeatureMap,
    MatchParams,
    MatchResult,
    RefineResult,
    aggregate_cost_volume,
    build_cost_volume,
    extract_features,
    match_stereo,
    refine_self_supervised,
    wta_disparity,
)
from .metrics import EvalResult, alignment_score, bad_pixel_ratio, end_point_error, evaluate

__version__ = "0.1.0"

__all__ = [
    "Event",
    "EventFormatError",
    "EventStream",
    "VoxelGrid",
    "parse_events",
    "voxelize",
    "write_events",
    "Image",
    "DisparityMap",
    "GradientField",
    "gradient",
    "occlusion_mask",
    "project_disparity",
    "warp_by_disparity",
    "warp_events",
    "ReconstructionConfig",
    "integrate_events",
    "integrate_events_raw",
    "SimulatorConfig",
    "simulate_events",
    "ScenePlane",
    "SceneSpec",
    "StereoScene",
    "render_scene",
    "standard_scene",
    "LossReport",
    "LossWeights",
    "cross_consistency_loss",
    "gradient_structure_loss",
    "internal_disparity_loss",
    "loss_landscape",
    "smoothness_loss",
    "total_loss",
    "weighted_total",
    "CostVolume",
    "FeatureMap",
    "MatchParams",
    "MatchResult",
    "RefineResult",
    "aggregate_cost_volume",
    "build_cost_volume",
    "extract_features",
    "match_stereo",
    "refine_self_supervised",
    "wta_disparity",
    "EvalResult",
    "alignment_score",
    "bad_pixel_ratio",
    "end_point_error",
    "evaluate",
    "__version__",
]
