"""Differentiable layer operations and the module classes built on them.

Convolutions are cross-correlations (the deep-learning convention). Every
module's forward pass routes through the matching functional operation so
shape checks apply to whole networks.
"""
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from src.errors import ShapeError
from src.validation.input_validator import require_ndim

IntOrTuple = Union[int, Sequence[int]]

ACTIVATIONS: Dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "relu": F.relu,
    "gelu": F.gelu,
    "sigmoid": torch.sigmoid,
    "tanh": torch.tanh,
    "none": lambda x: x,
}


def _as_tuple(value: IntOrTuple, n: int) -> Tuple[int, ...]:
    if isinstance(value, int):
        return (value,) * n
    value = tuple(int(v) for v in value)
    if len(value) != n:
        raise ShapeError(f"expected {n} values, got {value}")
    return value


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _check_conv(input: torch.Tensor, kernel: torch.Tensor, stride, padding, n_spatial: int):
    require_ndim(input, n_spatial + 2, "input")
    require_ndim(kernel, n_spatial + 2, "kernel")
    if input.shape[1] != kernel.shape[1]:
        raise ShapeError(f"input has {input.shape[1]} channels but kernel expects {kernel.shape[1]}")
    strides = _as_tuple(stride, n_spatial)
    pads = _as_tuple(padding, n_spatial)
    if min(strides) < 1:
        raise ShapeError(f"stride must be >= 1, got {strides}")
    for size, k, s, p in zip(input.shape[2:], kernel.shape[2:], strides, pads):
        if conv_output_size(size, k, s, p) < 1:
            raise ShapeError(f"kernel {tuple(kernel.shape[2:])} does not fit input {tuple(input.shape[2:])}")
    return strides, pads


def conv2d(input, kernel, stride: IntOrTuple = 1, padding: IntOrTuple = 0, bias=None) -> torch.Tensor:
    """2D cross-correlation of an NCHW input with an OIKhKw kernel."""
    strides, pads = _check_conv(input, kernel, stride, padding, 2)
    return F.conv2d(input, kernel, bias, stride=strides, padding=pads)


def conv3d(input, kernel, stride: IntOrTuple = 1, padding: IntOrTuple = 0, bias=None) -> torch.Tensor:
    """3D cross-correlation of an NCDHW input with an OIKdKhKw kernel."""
    strides, pads = _check_conv(input, kernel, stride, padding, 3)
    return F.conv3d(input, kernel, bias, stride=strides, padding=pads)


def dense_block(input, weights, bias=None, activation: str = "none") -> torch.Tensor:
    """Affine map ``input @ weights.T + bias`` followed by a pointwise activation."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}")
    require_ndim(weights, 2, "weights")
    if input.shape[-1] != weights.shape[1]:
        raise ShapeError(f"input dim {input.shape[-1]} does not match weights {tuple(weights.shape)}")
    return ACTIVATIONS[activation](F.linear(input, weights, bias))


def pool(input, kind: str, window: Optional[IntOrTuple] = None, stride: Optional[IntOrTuple] = None, padding: IntOrTuple = 0):
    """Max / average pooling over 2 or 3 spatial dims, or global average to (N, C)."""
    require_ndim(input, (4, 5), "input")
    n_spatial = input.ndim - 2
    if kind == "global_avg":
        return input.mean(dim=tuple(range(2, input.ndim)))
    if kind not in ("max", "avg"):
        raise ValueError("pool kind must be 'max', 'avg' or 'global_avg'")
    if window is None:
        raise ValueError(f"{kind} pooling needs a window")
    windows = _as_tuple(window, n_spatial)
    strides = _as_tuple(stride if stride is not None else window, n_spatial)
    pads = _as_tuple(padding, n_spatial)
    for size, w, p in zip(input.shape[2:], windows, pads):
        if w < 1 or w > size + 2 * p:
            raise ShapeError(f"pool window {windows} does not fit input {tuple(input.shape[2:])}")
    fn = {
        ("max", 2): F.max_pool2d,
        ("max", 3): F.max_pool3d,
        ("avg", 2): F.avg_pool2d,
        ("avg", 3): F.avg_pool3d,
    }[(kind, n_spatial)]
    return fn(input, windows, strides, pads)


def bilstm_forward(seq: torch.Tensor, lstm: nn.LSTM, hidden_size: Optional[int] = None) -> torch.Tensor:
    """Run a bidirectional LSTM over (S, D) or (B, S, D); returns forward || backward states."""
    require_ndim(seq, (2, 3), "seq")
    if not (lstm.bidirectional and lstm.batch_first):
        raise ValueError("bilstm_forward needs a bidirectional, batch_first LSTM")
    if hidden_size is not None and lstm.hidden_size != hidden_size:
        raise ShapeError(f"LSTM hidden size {lstm.hidden_size} != {hidden_size}")
    if seq.shape[-1] != lstm.input_size:
        raise ShapeError(f"sequence dim {seq.shape[-1]} != LSTM input size {lstm.input_size}")
    batched = seq if seq.ndim == 3 else seq.unsqueeze(0)
    out, _ = lstm(batched)
    return out if seq.ndim == 3 else out[0]


def multi_head_attention(
    tokens: torch.Tensor,
    qkv_weight: torch.Tensor,
    qkv_bias: Optional[torch.Tensor],
    out_weight: torch.Tensor,
    out_bias: Optional[torch.Tensor],
    heads: int,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Scaled dot-product self-attention over (T, D) or (B, T, D).

    Returns the projected output and the attention matrices (B, heads, T, T).
    """
    require_ndim(tokens, (2, 3), "tokens")
    dim = tokens.shape[-1]
    if heads < 1 or dim % heads:
        raise ShapeError(f"token dim {dim} is not divisible by {heads} heads")
    batched = tokens if tokens.ndim == 3 else tokens.unsqueeze(0)
    qkv = F.linear(batched, qkv_weight, qkv_bias)
    q, k, v = rearrange(qkv, "b t (three h d) -> three b h t d", three=3, h=heads)
    scores = torch.matmul(q, k.transpose(-1, -2)) * (dim // heads) ** -0.5
    attn = scores.softmax(dim=-1)
    out = rearrange(torch.matmul(attn, v), "b h t d -> b t (h d)")
    out = F.linear(out, out_weight, out_bias)
    if tokens.ndim == 2:
        return out[0], attn[0]
    return out, attn


def drop_path(x: torch.Tensor, rate: float, training: bool) -> torch.Tensor:
    """Zero whole samples of a residual branch with probability ``rate``; survivors are rescaled."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("drop_path_rate must lie in [0, 1)")
    if not training or rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = x.new_empty((x.shape[0],) + (1,) * (x.ndim - 1)).bernoulli_(keep)
    return x * mask / keep


def layer_norm(x: torch.Tensor, weight=None, bias=None, eps: float = 1e-5) -> torch.Tensor:
    return F.layer_norm(x, (x.shape[-1],), weight, bias, eps)


def norm_and_droppath(
    x: torch.Tensor,
    kind: str,
    norm: Optional[nn.Module] = None,
    drop_path_rate: float = 0.0,
    training: bool = False,
) -> torch.Tensor:
    """Normalise ``x`` (layer norm over the last dim or a batch-norm module), then drop path."""
    if kind == "layer_norm":
        weight = getattr(norm, "weight", None)
        bias = getattr(norm, "bias", None)
        y = layer_norm(x, weight, bias, getattr(norm, "eps", 1e-5))
    elif kind == "batch_norm":
        if norm is None:
            raise ValueError("batch_norm needs a BatchNorm module")
        y = norm(x)
    else:
        raise ValueError("kind must be 'layer_norm' or 'batch_norm'")
    return drop_path(y, drop_path_rate, training)


class Conv2d(nn.Conv2d):
    def forward(self, x):
        return conv2d(x, self.weight, self.stride, self.padding, self.bias)


class Conv3d(nn.Conv3d):
    def forward(self, x):
        return conv3d(x, self.weight, self.stride, self.padding, self.bias)


class Dense(nn.Linear):
    """Linear layer with a fused activation."""

    def __init__(self, in_features: int, out_features: int, activation: str = "none", bias: bool = True):
        super().__init__(in_features, out_features, bias=bias)
        self.activation = activation

    def forward(self, x):
        return dense_block(x, self.weight, self.bias, self.activation)


class BiLSTM(nn.Module):
    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.hidden_size = hidden_size
        self.lstm = nn.LSTM(input_size, hidden_size, batch_first=True, bidirectional=True)

    def forward(self, seq):
        return bilstm_forward(seq, self.lstm, self.hidden_size)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"dim {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x) -> Tuple[torch.Tensor, torch.Tensor]:
        return multi_head_attention(x, self.qkv.weight, self.qkv.bias, self.proj.weight, self.proj.bias, self.heads)


class DropPath(nn.Module):
    def __init__(self, rate: float = 0.0):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("drop_path_rate must lie in [0, 1)")
        self.rate = rate

    def forward(self, x):
        return drop_path(x, self.rate, self.training)

    def extra_repr(self) -> str:
        return f"rate={self.rate}"
