"""Skeleton action recognition with graph convolutions and a learnable
adjacency residual, built on a small tape-based reverse-mode autodiff core.

The pieces: `tensor` (arrays with gradients), `graph` (adjacency variants,
normalization, topology noise), `data` (sequences, datasets, joint-level
noise), `model` (the 3-layer GCN classifier and checkpoints), `training`
(Adam, schedule, evaluation), `analysis` (residual and misclassification
reports), and `cli` (the `skgcn` command).
"""

from .errors import ParseError, ShapeError, TrainingDiverged
from .graph import (
    AdjacencyMatrix,
    AdjacencyVariant,
    JointGraphTopology,
    NoiseKind,
    NoiseSpec,
    add_wrong_edges,
    build_adjacency,
    build_st_block_adjacency,
    normalize,
    normalize_tensor,
    top_k_edges,
)
from .data import (
    DatasetManifest,
    PreprocessConfig,
    SkeletonSequence,
    compute_features,
    drop_joints,
    resample_frames,
    shuffle_joints,
    synth_generate,
)
from .model import Checkpoint, GcnClassifier, ModelConfig, classify_pool, gcn_layer_forward, init_model
from .tensor import Tape, Tensor, backward
from .training import TrainConfig, adam_step, evaluate, lr_at_epoch, smoothed_ce_loss, train

__version__ = "0.1.0"

__all__ = [
    "AdjacencyMatrix",
    "AdjacencyVariant",
    "Checkpoint",
    "DatasetManifest",
    "GcnClassifier",
    "JointGraphTopology",
    "ModelConfig",
    "NoiseKind",
    "NoiseSpec",
    "ParseError",
    "PreprocessConfig",
    "ShapeError",
    "SkeletonSequence",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainingDiverged",
    "add_wrong_edges",
    "adam_step",
    "backward",
    "build_adjacency",
    "build_st_block_adjacency",
    "classify_pool",
    "compute_features",
    "drop_joints",
    "evaluate",
    "gcn_layer_forward",
    "init_model",
    "lr_at_epoch",
    "normalize",
    "normalize_tensor",
    "resample_frames",
    "shuffle_joints",
    "smoothed_ce_loss",
    "synth_generate",
    "top_k_edges",
    "train",
]
