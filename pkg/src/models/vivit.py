"""Video vision transformer with factorised self-attention over slices."""
import torch
import torch.nn as nn
from einops import rearrange

from src.errors import ShapeError
from src.models.spec import AggregatorSpec, InputSpec
from src.tensorcore.layers import Dense, MultiHeadSelfAttention
from src.validation.input_validator import require_ndim


class FSABlock(nn.Module):
    """Spatial attention within each slice, then temporal attention across slices, then an MLP."""

    def __init__(self, dim: int, heads: int, mlp_dim: int):
        super().__init__()
        self.norm_spatial = nn.LayerNorm(dim)
        self.attn_spatial = MultiHeadSelfAttention(dim, heads)
        self.norm_temporal = nn.LayerNorm(dim)
        self.attn_temporal = MultiHeadSelfAttention(dim, heads)
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(Dense(dim, mlp_dim, activation="gelu"), Dense(mlp_dim, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, s, p, _ = x.shape
        spatial = rearrange(x, "b s p d -> (b s) p d")
        out, _ = self.attn_spatial(self.norm_spatial(spatial))
        x = x + rearrange(out, "(b s) p d -> b s p d", b=b, s=s)
        temporal = rearrange(x, "b s p d -> (b p) s d")
        out, _ = self.attn_temporal(self.norm_temporal(temporal))
        x = x + rearrange(out, "(b p) s d -> b s p d", b=b, p=p)
        return x + self.mlp(self.norm_mlp(x))


class ViViTFSA(nn.Module):
    def __init__(self, agg: AggregatorSpec, inp: InputSpec):
        super().__init__()
        p = agg.patch_size
        if inp.height % p or inp.width % p:
            raise ShapeError(f"input {inp.height}x{inp.width} is not divisible into {p}px patches")
        self.patch_size = p
        self.n_slices = inp.n_slices
        self.n_patches = (inp.height // p) * (inp.width // p)
        dim = agg.token_dim
        self.patch_embed = Dense(p * p, dim)
        self.spatial_pos = nn.Parameter(torch.zeros(1, 1, self.n_patches, dim))
        self.temporal_pos = nn.Parameter(torch.zeros(1, inp.n_slices, 1, dim))
        self.blocks = nn.ModuleList(FSABlock(dim, agg.vivit_heads, agg.vivit_mlp_dim) for _ in range(agg.vivit_blocks))
        self.norm = nn.LayerNorm(dim)
        self.head = Dense(dim, 1)
        nn.init.trunc_normal_(self.spatial_pos, std=0.02)
        nn.init.trunc_normal_(self.temporal_pos, std=0.02)

    def tokens(self, volume: torch.Tensor) -> torch.Tensor:
        """(B, S, H, W) -> embedded token grid (B, S, P, dim)."""
        p = self.patch_size
        if volume.shape[-2] % p or volume.shape[-1] % p:
            raise ShapeError(f"slice {tuple(volume.shape[-2:])} is not divisible into {p}px patches")
        patches = rearrange(volume, "b s (h p1) (w p2) -> b s (h w) (p1 p2)", p1=p, p2=p)
        if patches.shape[1] != self.n_slices or patches.shape[2] != self.n_patches:
            raise ShapeError(f"expected {self.n_slices} slices of {self.n_patches} patches, got {tuple(patches.shape[1:3])}")
        return self.patch_embed(patches) + self.spatial_pos + self.temporal_pos

    def forward(self, volume: torch.Tensor) -> torch.Tensor:
        x = self.tokens(volume)
        for block in self.blocks:
            x = block(x)
        pooled = self.norm(x).mean(dim=(1, 2))
        return self.head(pooled).squeeze(-1)


def vivit_fsa_forward(volume: torch.Tensor, model: ViViTFSA) -> torch.Tensor:
    """Logit for an (S, H, W) volume, or logits for a (B, S, H, W) batch."""
    require_ndim(volume, (3, 4), "volume")
    batched = volume if volume.ndim == 4 else volume.unsqueeze(0)
    logits = model(batched)
    return logits if volume.ndim == 4 else logits[0]
