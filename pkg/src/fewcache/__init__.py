"""Few-shot classification by key-value cache retrieval over embeddings.

Labeled embedding vectors become a key-value cache; queries are classified
by exponential-affinity retrieval from that cache blended with a zero-shot
classifier, optionally after fine-tuning the cache keys with closed-form
gradients.
"""

from .core import (
    CacheModel,
    FeatureMatrix,
    Hyperparams,
    LabelMatrix,
    Logits,
    NORM_TOLERANCE,
    activation_phi,
    build_cache,
    compute_affinities,
    l2_normalize_rows,
    predict,
    predict_batch,
    predict_multimodal,
)
from .datastore import (
    DatasetManifest,
    read_cache,
    read_features,
    read_labels,
    read_manifest,
    write_cache,
    write_features,
    write_labels,
)
from .errors import (
    DimensionMismatchError,
    EmptyCacheError,
    FewcacheError,
    FormatError,
    LabelRangeError,
    ManifestError,
    NormalizationError,
)
from .finetune import FineTuneConfig, TrainLog, ce_loss, cosine_lr, fine_tune, key_gradient, softmax
from .search import (
    SearchGrid,
    SearchResult,
    compress_shots,
    grid_search,
    reduce_cache,
    reduce_trials,
)

__version__ = "0.1.0"

__all__ = [
    "CacheModel",
    "DatasetManifest",
    "DimensionMismatchError",
    "EmptyCacheError",
    "FeatureMatrix",
    "FewcacheError",
    "FineTuneConfig",
    "FormatError",
    "Hyperparams",
    "LabelMatrix",
    "LabelRangeError",
    "Logits",
    "ManifestError",
    "NORM_TOLERANCE",
    "NormalizationError",
    "SearchGrid",
    "SearchResult",
    "TrainLog",
    "activation_phi",
    "build_cache",
    "ce_loss",
    "compress_shots",
    "compute_affinities",
    "cosine_lr",
    "fine_tune",
    "grid_search",
    "key_gradient",
    "l2_normalize_rows",
    "predict",
    "predict_batch",
    "predict_multimodal",
    "read_cache",
    "read_features",
    "read_labels",
    "read_manifest",
    "reduce_cache",
    "reduce_trials",
    "softmax",
    "write_cache",
    "write_features",
    "write_labels",
]
