"""Location-aware feature embeddings on synthetic scenes.

Losses that make feature distances locally proportional to geometric
distances, retrieval-based localization evaluation, and trajectory
recovery from masked feature-distance matrices.
"""

__version__ = "0.1.0"

from .evaluate import AccuracyCurve, accuracy_curve, distance_scatter, pearson, top1_retrieve
from .geometry import PairSets, classify_pairs, kappa, pairwise_sq_edm
from .landmarks import greedy_sample, threshold_sample
from .losses import LossConfig, LossValue, combined_loss, hinge, huber, nv_loss, vg_loss
from .recovery import (
    DisconnectedMaskError,
    GramCompletion,
    MaskedEDM,
    RecoveryResult,
    TrajectoryEstimate,
    build_masked_edm,
    classical_mds,
    complete_gram,
    gram_from_edm,
    procrustes_align,
    recover_trajectory,
    smacof,
)
from .scene import ObservationMap, Scene, SceneConfig, generate_scene, load_scene, save_scene
from .trainer import (
    EmbeddingModel,
    TrainConfig,
    TrainResult,
    TrainingTuple,
    backward,
    forward,
    forward_batch,
    init_model,
    load_model,
    mine_tuples,
    resolve_lambda,
    save_model,
    train,
)

__all__ = [
    "AccuracyCurve",
    "DisconnectedMaskError",
    "EmbeddingModel",
    "GramCompletion",
    "LossConfig",
    "LossValue",
    "MaskedEDM",
    "ObservationMap",
    "PairSets",
    "RecoveryResult",
    "Scene",
    "SceneConfig",
    "TrainConfig",
    "TrainResult",
    "TrajectoryEstimate",
    "TrainingTuple",
    "accuracy_curve",
    "backward",
    "build_masked_edm",
    "classical_mds",
    "classify_pairs",
    "combined_loss",
    "complete_gram",
    "distance_scatter",
    "forward",
    "forward_batch",
    "gram_from_edm",
    "greedy_sample",
    "hinge",
    "huber",
    "init_model",
    "kappa",
    "load_model",
    "load_scene",
    "mine_tuples",
    "nv_loss",
    "pairwise_sq_edm",
    "pearson",
    "procrustes_align",
    "recover_trajectory",
    "resolve_lambda",
    "save_model",
    "save_scene",
    "smacof",
    "threshold_sample",
    "top1_retrieve",
    "train",
    "vg_loss",
]
