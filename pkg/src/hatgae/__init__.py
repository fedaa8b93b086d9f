"""Self-supervised graph auto-encoder with hierarchical adaptive feature
masking and trainable node corruption, written on numpy."""

from .centrality import NodeScores, PowerIterConfig, eigenvector_scores, indegree_scores, node_scores, pagerank_scores
from .corruption import NodeMask, apply_corruption, sample_node_mask
from .estimator import HATGAE, check_graph
from .evaluation import LinearProbe, ProbeConfig, export_embeddings, linear_probe, metrics
from .exceptions import (
    AllClean,
    ConfigError,
    FiniteCheckError,
    GraphFormatError,
    HatGaeError,
    NonConvergence,
    ScheduleExhausted,
    TrainingDiverged,
    ZeroNorm,
    ZeroVector,
)
from .gat import ModelParams, decode, encode, load_checkpoint, remask, save_checkpoint
from .graph import Graph, SbmConfig, in_degree, load_graph_bundle, save_graph_bundle, sbm_generate, with_self_loops
from .masking import MaskSchedule, build_mask_schedule, dimension_importance, features_at_level
from .training import TrainConfig, TrainReport, train

__version__ = "0.1.0"

__all__ = [
    "AllClean", "ConfigError", "FiniteCheckError", "Graph", "GraphFormatError", "HATGAE",
    "HatGaeError", "LinearProbe", "MaskSchedule", "ModelParams", "NodeMask", "NodeScores",
    "NonConvergence", "PowerIterConfig", "ProbeConfig", "SbmConfig", "ScheduleExhausted",
    "TrainConfig", "TrainReport", "TrainingDiverged", "ZeroNorm", "ZeroVector",
    "apply_corruption", "build_mask_schedule", "check_graph", "decode", "dimension_importance",
    "eigenvector_scores", "encode", "export_embeddings", "features_at_level", "in_degree",
    "indegree_scores", "linear_probe", "load_checkpoint", "load_graph_bundle", "metrics",
    "node_scores", "pagerank_scores", "remask", "sample_node_mask", "save_checkpoint",
    "save_graph_bundle", "sbm_generate", "train", "with_self_loops",
]
