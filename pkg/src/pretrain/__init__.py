from src.pretrain.augment import contrastive_augment
from src.pretrain.tinc import TINCTerms, tinc_loss, tinc_terms, time_margin
from src.pretrain.trainer import PretrainResult, ProjectionHead, pretrain_encoder, projector_dim
from src.pretrain.transfer import TransferLog, export_encoder, transfer_weights

__all__ = [
    "PretrainResult",
    "ProjectionHead",
    "TINCTerms",
    "TransferLog",
    "contrastive_augment",
    "export_encoder",
    "pretrain_encoder",
    "projector_dim",
    "time_margin",
    "tinc_loss",
    "tinc_terms",
    "transfer_weights",
]
