"""Multimodal out-of-distribution detection toolkit."""
__version__ = "0.1.0"

from .a2d import A2DConfig, discrepancy_statistic, total_loss
from .data_io import SynthConfig, export_manifest, generate_synthetic, load_manifest
from .metrics import EvalReport, auroc, evaluate, fpr_at_tpr, id_accuracy
from .model import MultimodalModel, backward, forward, init_model
from .npmix import NpMixConfig, compute_prototypes, mixup_synthesize, npmix_synthesize
from .scores import KINDS as SCORER_KINDS, ScorerConfig, fit, score_batch
from .trainer import TrainConfig, train, train_baseline_vs_a2d
from .types import LabeledBatch, concat_modalities, seeded_rng, split_modalities

__all__ = [
    "A2DConfig", "EvalReport", "LabeledBatch", "MultimodalModel", "NpMixConfig", "SCORER_KINDS",
    "ScorerConfig", "SynthConfig", "TrainConfig", "auroc", "backward", "compute_prototypes",
    "concat_modalities", "discrepancy_statistic", "evaluate", "export_manifest", "fit",
    "forward", "fpr_at_tpr", "generate_synthetic", "id_accuracy", "init_model",
    "load_manifest", "mixup_synthesize", "npmix_synthesize", "score_batch", "seeded_rng",
    "split_modalities", "total_loss", "train", "train_baseline_vs_a2d",
]
