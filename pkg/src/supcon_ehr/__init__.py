"""Supervised contrastive losses for clinical-style sequence classification.

Losses with hand-derived gradients, a numpy LSTM encoder, an Adam trainer,
synthetic data, ranking metrics and an experiment CLI.
"""

__version__ = "0.1.0"

from .losses import (  # noqa: E402
    AnchorSet,
    BatchEmbeddings,
    LossConfig,
    LossKind,
    LossOutput,
    bce_loss,
    cbce_loss,
    combined_loss,
    csce_loss,
    predict_proba,
    scr_loss,
)

__all__ = [
    "AnchorSet",
    "BatchEmbeddings",
    "LossConfig",
    "LossKind",
    "LossOutput",
    "bce_loss",
    "cbce_loss",
    "combined_loss",
    "csce_loss",
    "predict_proba",
    "scr_loss",
]
