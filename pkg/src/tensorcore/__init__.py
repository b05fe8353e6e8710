from src.tensorcore.checkpoint import Checkpoint, load_checkpoint, load_into_module, module_tensors, save_checkpoint
from src.tensorcore.gradcheck import GradCheckReport, grad_check
from src.tensorcore.layers import (
    BiLSTM,
    Conv2d,
    Conv3d,
    Dense,
    DropPath,
    MultiHeadSelfAttention,
    bilstm_forward,
    conv2d,
    conv3d,
    dense_block,
    drop_path,
    layer_norm,
    multi_head_attention,
    norm_and_droppath,
    pool,
)
from src.tensorcore.losses import bce_loss
from src.tensorcore.optim import LRSchedule, OptimizerState, build_optimizer, cosine_lr, optimizer_step

__all__ = [
    "BiLSTM",
    "Checkpoint",
    "Conv2d",
    "Conv3d",
    "Dense",
    "DropPath",
    "GradCheckReport",
    "LRSchedule",
    "MultiHeadSelfAttention",
    "OptimizerState",
    "bce_loss",
    "bilstm_forward",
    "build_optimizer",
    "conv2d",
    "conv3d",
    "cosine_lr",
    "dense_block",
    "drop_path",
    "grad_check",
    "layer_norm",
    "load_checkpoint",
    "load_into_module",
    "module_tensors",
    "multi_head_attention",
    "norm_and_droppath",
    "optimizer_step",
    "pool",
    "save_checkpoint",
]
