"""Cross-slice aggregators for the 2.5D architectures.

Each aggregator maps slice embeddings (B, S, D) to logits (B,) plus an
optional per-slice attention trace (B, S).
"""
import math
from typing import Optional, Tuple

import torch
import torch.nn as nn

from src.errors import ShapeError
from src.tensorcore.layers import BiLSTM, Dense, DropPath, MultiHeadSelfAttention
from src.validation.input_validator import require_ndim


class SEAttention(nn.Module):
    """Squeeze-and-excitation over the slice axis of a stacked (S, F) representation."""

    def __init__(self, n_slices: int, reduction: int = 4):
        super().__init__()
        if n_slices < 1 or reduction < 1:
            raise ValueError("n_slices and reduction must be >= 1")
        hidden = math.ceil(n_slices / reduction)
        self.n_slices = n_slices
        self.fc1 = Dense(n_slices, hidden, activation="relu")
        self.fc2 = Dense(hidden, n_slices, activation="sigmoid")

    def forward(self, features: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if features.shape[-2] != self.n_slices:
            raise ShapeError(f"expected {self.n_slices} slices, got {features.shape[-2]}")
        squeeze = features.mean(dim=-1)
        weights = self.fc2(self.fc1(squeeze))
        return weights, features * weights.unsqueeze(-1)


def se_attention(features: torch.Tensor, module: SEAttention) -> Tuple[torch.Tensor, torch.Tensor]:
    """(weights, reweighted) for an (S, F) or (B, S, F) stack."""
    require_ndim(features, (2, 3), "features")
    return module(features)


class BiLSTMAggregator(nn.Module):
    def __init__(self, dim: int, hidden: int, n_slices: int, reduction: int):
        super().__init__()
        self.lstm = BiLSTM(dim, hidden)
        self.se = SEAttention(n_slices, reduction)
        self.head = Dense(2 * hidden, 1)

    def forward(self, e: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        weights, reweighted = self.se(self.lstm(e))
        logit = self.head(reweighted.mean(dim=-2)).squeeze(-1)
        return logit, weights


class TransformerBlock(nn.Module):
    """Pre-norm block: attention and MLP residual branches, each behind drop path."""

    def __init__(self, dim: int, heads: int, mlp_dim: int, drop_path_rate: float = 0.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(Dense(dim, mlp_dim, activation="gelu"), Dense(mlp_dim, dim))
        self.drop_path = DropPath(drop_path_rate)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        branch, attn = self.attn(self.norm1(x))
        x = x + self.drop_path(branch)
        x = x + self.drop_path(self.mlp(self.norm2(x)))
        return x, attn


class TransformerAggregator(nn.Module):
    """Classification-token transformer over the slice sequence.

    The trace is the classification token's attention to each slice in the
    last block, renormalised over slices per head and averaged over heads, so
    every row sums to 1.
    """

    def __init__(
        self,
        dim: int,
        n_slices: int,
        n_blocks: int,
        heads: int,
        mlp_dim: int,
        drop_path_max: float = 0.1,
        pos_embedding: bool = True,
    ):
        super().__init__()
        self.n_slices = n_slices
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, n_slices + 1, dim)) if pos_embedding else None
        rates = torch.linspace(0.0, drop_path_max, n_blocks).tolist() if n_blocks > 1 else [0.0]
        self.blocks = nn.ModuleList(TransformerBlock(dim, heads, mlp_dim, r) for r in rates)
        self.norm = nn.LayerNorm(dim)
        self.head = Dense(dim, 1)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        if self.pos_embed is not None:
            nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def forward(self, e: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        require_ndim(e, 3, "embeddings")
        if e.shape[1] != self.n_slices:
            raise ShapeError(f"expected {self.n_slices} slices, got {e.shape[1]}")
        x = torch.cat([self.cls_token.expand(e.shape[0], -1, -1), e], dim=1)
        if self.pos_embed is not None:
            x = x + self.pos_embed
        attn = None
        for block in self.blocks:
            x, attn = block(x)
        logit = self.head(self.norm(x[:, 0])).squeeze(-1)
        to_slices = attn[:, :, 0, 1:]
        to_slices = to_slices / to_slices.sum(dim=-1, keepdim=True)
        return logit, to_slices.mean(dim=1)


class MeanPoolAggregator(nn.Module):
    """Plain MIL baseline: arithmetic mean of slice embeddings, then a linear head."""

    def __init__(self, dim: int):
        super().__init__()
        self.head = Dense(dim, 1)

    def forward(self, e: torch.Tensor) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        return self.head(e.mean(dim=-2)).squeeze(-1), None
