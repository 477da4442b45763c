"""Few-shot classification from very little labeled data.

The pipeline has two phases. First, a pair of small fully connected
encoders is pretrained contrastively on two complementary views of each
raw sample (luma and chroma planes), with no labels involved. Second,
each few-shot task builds a similarity graph over its support and query
feature rows, smooths features along that graph with a trainable
self-loop weight, inflates the tiny support set with mixup copies, and
trains a linear classifier in two stages, the second distilling the
first's predictions. Everything is deterministic given its seed.
"""

from .classifier import (
    ClassifierParams,
    TaskTrainConfig,
    ce_loss,
    distill_loss,
    forward,
    kl_div,
    mixup_augment,
    predict,
    train_stage1,
    train_stage2,
)
from .contrastive import (
    EncoderParams,
    PretrainConfig,
    RawSample,
    contrast_loss,
    encode,
    extract_features,
    load_encoder,
    load_raw_samples,
    pretrain,
    save_encoder,
    save_raw_samples,
    split_views,
)
from .data import (
    Episode,
    EpisodeSpec,
    FeatureDataset,
    import_csv,
    load_features,
    sample_episode,
    save_features,
)
from .errors import (
    DataFormatError,
    DegenerateVectorError,
    InfeasibleTaskError,
    NumericError,
)
from .evaluate import (
    ABLATIONS,
    EvalConfig,
    EvalReport,
    GraphConfig,
    ablation_grid,
    clustered_features,
    evaluate,
    parse_report,
    run_episode,
    serialize_report,
    solve_episode,
    sweep_k,
)
from .graph import (
    PropagationConfig,
    TaskGraph,
    build_similarity,
    build_task_graph,
    cosine_similarity,
    normalize_adjacency,
    propagate,
    propagate_alpha_grad,
    sparsify_top_m,
)
from .rng import derive_seed, make_rng

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS",
    "ClassifierParams",
    "DataFormatError",
    "DegenerateVectorError",
    "EncoderParams",
    "Episode",
    "EpisodeSpec",
    "EvalConfig",
    "EvalReport",
    "FeatureDataset",
    "GraphConfig",
    "InfeasibleTaskError",
    "NumericError",
    "PretrainConfig",
    "PropagationConfig",
    "RawSample",
    "TaskGraph",
    "TaskTrainConfig",
    "ablation_grid",
    "ce_loss",
    "clustered_features",
    "contrast_loss",
    "cosine_similarity",
    "build_similarity",
    "build_task_graph",
    "derive_seed",
    "distill_loss",
    "encode",
    "evaluate",
    "extract_features",
    "forward",
    "import_csv",
    "kl_div",
    "load_encoder",
    "load_features",
    "load_raw_samples",
    "make_rng",
    "mixup_augment",
    "normalize_adjacency",
    "parse_report",
    "predict",
    "pretrain",
    "propagate",
    "propagate_alpha_grad",
    "run_episode",
    "sample_episode",
    "save_encoder",
    "save_features",
    "save_raw_samples",
    "serialize_report",
    "solve_episode",
    "sparsify_top_m",
    "split_views",
    "sweep_k",
    "train_stage1",
    "train_stage2",
]
