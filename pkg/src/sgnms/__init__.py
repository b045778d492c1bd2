"""Detection post-processing toolkit: embedding-gated NMS, occlusion-aware
evaluation, KITTI-format I/O, a synthetic scene generator, and embedding training."""

__version__ = "0.1.0"

from .geometry import (
    Box,
    DegenerateBox,
    GeometricFeature,
    NoiseCoefficients,
    OcclusionLevel,
    apply_noise,
    iou,
    max_mutual_iou,
    occlusion_level,
    sample_noise,
    to_corner,
    to_geometric,
)
from .suppression import (
    Detection,
    MissingEmbedding,
    PhiFunction,
    PhiKind,
    SuppressionResult,
    greedy_nms,
    make_algorithm,
    sg_nms,
    soft_nms_linear,
    suppress_per_class,
)
from .score_fusion import GridScores, fuse
from .embedding import (
    BoxAssignment,
    EmbeddingLossConfig,
    EmbeddingTrainingScene,
    LinearSemanticProvider,
    NonFiniteLoss,
    assign_boxes,
    attach_provider_embeddings,
    compute_sge,
    embedding_loss_gradient,
    group_loss,
    load_provider,
    normalized_geometry,
    oracle_embeddings,
    save_provider,
    separation_loss,
    train_provider,
    training_scene,
)
from .evaluation import (
    Difficulty,
    EvalReport,
    GroundTruth,
    Scene,
    average_precision,
    evaluate,
    kitti_difficulty_filter,
    log_average_miss_rate,
    match_detections,
    recall_by_mmiou,
)
from .synth import (
    PlacementFailure,
    SynthConfig,
    generate_synthetic,
    load_corpus,
    parse_synth_config,
    write_corpus,
)

__all__ = [
    "Box",
    "BoxAssignment",
    "DegenerateBox",
    "Detection",
    "Difficulty",
    "EmbeddingLossConfig",
    "EmbeddingTrainingScene",
    "EvalReport",
    "GeometricFeature",
    "GridScores",
    "GroundTruth",
    "LinearSemanticProvider",
    "MissingEmbedding",
    "NoiseCoefficients",
    "NonFiniteLoss",
    "OcclusionLevel",
    "PhiFunction",
    "PhiKind",
    "PlacementFailure",
    "Scene",
    "SuppressionResult",
    "SynthConfig",
    "apply_noise",
    "assign_boxes",
    "attach_provider_embeddings",
    "average_precision",
    "compute_sge",
    "embedding_loss_gradient",
    "evaluate",
    "fuse",
    "generate_synthetic",
    "greedy_nms",
    "group_loss",
    "iou",
    "kitti_difficulty_filter",
    "load_corpus",
    "load_provider",
    "log_average_miss_rate",
    "make_algorithm",
    "match_detections",
    "max_mutual_iou",
    "normalized_geometry",
    "occlusion_level",
    "oracle_embeddings",
    "parse_synth_config",
    "recall_by_mmiou",
    "sample_noise",
    "save_provider",
    "separation_loss",
    "sg_nms",
    "soft_nms_linear",
    "suppress_per_class",
    "to_corner",
    "to_geometric",
    "train_provider",
    "training_scene",
    "write_corpus",
    "__version__",
]
