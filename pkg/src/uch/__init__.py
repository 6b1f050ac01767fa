"""Unsupervised concatenation hashing for cross-modal retrieval.

Learns one linear hash projection per modality plus a unified binary
code matrix for the training set, coupled through a neighborhood graph
on the concatenated features (locally-linear weights or an anchor
Laplacian) and adaptively reweighted modalities.  Evaluation is Hamming
ranking with mean average precision for the image-to-text and
text-to-image tasks.
"""

from .dataio import (
    DatasetManifest,
    LabeledSplit,
    center_train_query,
    load_manifest,
    load_matrix,
    load_model,
    save_model,
    split_dataset,
)
from .encoder import encode, load_codes, pack_codes, save_codes, unpack_codes
from .errors import DataError, NumericalError, UchError, UsageError
from .evaluate import RetrievalReport, average_precision, evaluate_task, hamming_rank
from .graph import AffinityGraph, GraphLaplacian, anchor_graph, anchor_select, knn_indices, laplacian, lle_weights
from .model import (
    CodeMatrix,
    ConcatenatedFeatures,
    FeatureMatrix,
    UchModel,
    concatenate_features,
    l21_norm,
    relaxed_objective,
    sign_quantize,
)
from .trainer import TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "AffinityGraph",
    "CodeMatrix",
    "ConcatenatedFeatures",
    "DataError",
    "DatasetManifest",
    "FeatureMatrix",
    "GraphLaplacian",
    "LabeledSplit",
    "NumericalError",
    "RetrievalReport",
    "TrainConfig",
    "TrainResult",
    "UchError",
    "UchModel",
    "UsageError",
    "anchor_graph",
    "anchor_select",
    "average_precision",
    "center_train_query",
    "concatenate_features",
    "encode",
    "evaluate_task",
    "hamming_rank",
    "knn_indices",
    "l21_norm",
    "laplacian",
    "lle_weights",
    "load_codes",
    "load_manifest",
    "load_matrix",
    "load_model",
    "pack_codes",
    "relaxed_objective",
    "save_codes",
    "save_model",
    "sign_quantize",
    "split_dataset",
    "train",
    "unpack_codes",
]
