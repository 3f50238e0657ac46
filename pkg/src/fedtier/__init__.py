"""Federated-learning simulator for click prediction with device tiers.

Synthesizes controllable tier/data coupling via Dirichlet tier mapping,
trains a dot-interaction click model under tier-aware optimizations
(exclusion, over-selection, pruning, quantization, channel slicing), and
quantifies per-tier fairness impact with the MDAC metric.
"""

from .data import (
    ClientDataset,
    Dataset,
    DatasetError,
    FeatureSchema,
    Interaction,
    SparseField,
    SplitPolicy,
    SynthParams,
    load_csv,
    save_csv,
    synthesize,
)
from .engine import (
    ClientUpdate,
    HyperParams,
    OptimizationConfig,
    RoundRecord,
    ServerState,
    TierPerformanceModel,
    aggregate,
    plan_epoch,
    run_client,
    server_step,
    train,
)
from .metrics import FairnessReport, TierAUC, auc, fairness, per_tier_auc
from .model import (
    ModelConfig,
    ModelParams,
    SubModelSpec,
    embed_subgradient,
    extract_submodel,
    forward,
    init,
    load_params,
    loss_and_grad,
    save_params,
)
from .presets import PRESETS, get_preset
from .tiering import (
    HeterogeneityReport,
    Tier,
    TierAssignment,
    dirichlet_tier_map,
    heterogeneity_report,
    random_tier_map,
)

__version__ = "0.1.0"

__all__ = [
    "ClientDataset",
    "ClientUpdate",
    "Dataset",
    "DatasetError",
    "FairnessReport",
    "FeatureSchema",
    "HeterogeneityReport",
    "HyperParams",
    "Interaction",
    "ModelConfig",
    "ModelParams",
    "OptimizationConfig",
    "PRESETS",
    "RoundRecord",
    "ServerState",
    "SparseField",
    "SplitPolicy",
    "SubModelSpec",
    "SynthParams",
    "Tier",
    "TierAUC",
    "TierAssignment",
    "TierPerformanceModel",
    "aggregate",
    "auc",
    "dirichlet_tier_map",
    "embed_subgradient",
    "extract_submodel",
    "fairness",
    "forward",
    "get_preset",
    "heterogeneity_report",
    "init",
    "load_csv",
    "load_params",
    "loss_and_grad",
    "per_tier_auc",
    "plan_epoch",
    "random_tier_map",
    "run_client",
    "save_csv",
    "save_params",
    "server_step",
    "synthesize",
    "train",
]
