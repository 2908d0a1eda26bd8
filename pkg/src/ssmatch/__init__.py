"""Self-support prototype matching for few-shot segmentation features.

Given a few support feature maps with object masks and a query feature
map, the pipeline matches the query against support prototypes, then
re-estimates prototypes from the query's own confident pixels and
matches again. Includes a binary tensor format, a synthetic episode
generator, losses with analytic gradients, and an evaluation harness.
"""

from .episode import Episode, load_manifest, save_episodes
from .errors import (
    BadMagicError,
    BadValueError,
    BadVersionError,
    ConfigError,
    DimMismatchError,
    DimOverflowError,
    EmptyMaskError,
    InvalidRatioError,
    NonFiniteValueError,
    SsmatchError,
    TensorFormatError,
    TruncatedPayloadError,
    ZeroPrototypeError,
)
from .harness import (
    ablation_table,
    bootstrap_lower_bound,
    evaluate,
    evaluate_episode,
    partial_prototype_experiment,
    report_to_json,
    similarity_stats,
    sweep_thresholds,
    weak_label_bbox,
    weaken_episode_labels,
)
from .losses import (
    episode_losses,
    gradient_check,
    loss_grad_query,
    loss_matching,
    loss_self,
    loss_total,
    numerical_grad_query,
)
from .metrics import iou, mae_all, mae_tp
from .pipeline import (
    ABLATION_FULL,
    ABLATION_NO_ASBP,
    ABLATION_NO_SSL,
    ABLATION_NO_SSM,
    ABLATIONS,
    MatchDiagnostics,
    MatchResult,
    PredictionPair,
    PrototypeSet,
    SspConfig,
    adaptive_bg_prototype,
    baseline_match,
    blend_prototypes,
    match_episode,
    match_with_prototypes,
    self_support_bg,
    self_support_fg,
    support_prototypes,
    threshold_select,
)
from .sspt import (
    KIND_BINARY_MASK,
    KIND_FEATURE,
    KIND_PROBABILITY_MASK,
    read_tensor_bytes,
    read_tensor_file,
    write_tensor_bytes,
    write_tensor_file,
)
from .synthetic import SyntheticSpec, generate_episode, generate_suite
from .tensor_core import (
    COSINE_EPS,
    AffinityMatrix,
    FeatureMap,
    Mask,
    Prototype,
    PrototypeField,
    cosine_field_map,
    cosine_map,
    masked_average_pooling,
    pairwise_softmax,
)

__version__ = "0.1.0"

__all__ = [
    "ABLATION_FULL",
    "ABLATION_NO_ASBP",
    "ABLATION_NO_SSL",
    "ABLATION_NO_SSM",
    "ABLATIONS",
    "AffinityMatrix",
    "BadMagicError",
    "BadValueError",
    "BadVersionError",
    "COSINE_EPS",
    "ConfigError",
    "DimMismatchError",
    "DimOverflowError",
    "EmptyMaskError",
    "Episode",
    "FeatureMap",
    "InvalidRatioError",
    "KIND_BINARY_MASK",
    "KIND_FEATURE",
    "KIND_PROBABILITY_MASK",
    "Mask",
    "MatchDiagnostics",
    "MatchResult",
    "NonFiniteValueError",
    "PredictionPair",
    "Prototype",
    "PrototypeField",
    "PrototypeSet",
    "SspConfig",
    "SsmatchError",
    "SyntheticSpec",
    "TensorFormatError",
    "TruncatedPayloadError",
    "ZeroPrototypeError",
    "ablation_table",
    "adaptive_bg_prototype",
    "baseline_match",
    "blend_prototypes",
    "bootstrap_lower_bound",
    "cosine_field_map",
    "cosine_map",
    "episode_losses",
    "evaluate",
    "evaluate_episode",
    "gradient_check",
    "generate_episode",
    "generate_suite",
    "iou",
    "load_manifest",
    "loss_grad_query",
    "loss_matching",
    "loss_self",
    "loss_total",
    "mae_all",
    "mae_tp",
    "masked_average_pooling",
    "match_episode",
    "match_with_prototypes",
    "numerical_grad_query",
    "pairwise_softmax",
    "partial_prototype_experiment",
    "read_tensor_bytes",
    "read_tensor_file",
    "report_to_json",
    "save_episodes",
    "self_support_bg",
    "self_support_fg",
    "similarity_stats",
    "support_prototypes",
    "sweep_thresholds",
    "threshold_select",
    "weak_label_bbox",
    "weaken_episode_labels",
    "write_tensor_bytes",
    "write_tensor_file",
]
