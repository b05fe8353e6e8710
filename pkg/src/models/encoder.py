"""ResNet-style 2D slice encoder shared by the 2.5D architectures."""
from dataclasses import dataclass
from typing import List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from src.errors import ShapeError
from src.models.spec import EncoderSpec
from src.tensorcore.layers import Conv2d, norm_and_droppath, pool
from src.validation.input_validator import require_ndim


@dataclass(frozen=True)
class BlockPlan:
    name: str
    inplanes: int
    planes: int
    stride: int
    downsample: bool


def resnet_plan(spec: EncoderSpec) -> List[BlockPlan]:
    """Per-block layout of the bottleneck stages; the first stage keeps resolution."""
    plan = []
    inplanes = spec.stem_width
    for stage, (planes, blocks) in enumerate(zip(spec.stage_planes, spec.stage_blocks)):
        for b in range(blocks):
            stride = 2 if stage > 0 and b == 0 else 1
            plan.append(
                BlockPlan(
                    name=f"layer{stage + 1}.{b}",
                    inplanes=inplanes,
                    planes=planes,
                    stride=stride,
                    downsample=stride != 1 or inplanes != planes * spec.expansion,
                )
            )
            inplanes = planes * spec.expansion
    return plan


class Bottleneck(nn.Module):
    def __init__(self, block: BlockPlan, expansion: int, drop_path_rate: float = 0.0):
        super().__init__()
        width, out = block.planes, block.planes * expansion
        self.drop_path_rate = drop_path_rate
        self.conv1 = Conv2d(block.inplanes, width, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = Conv2d(width, width, 3, stride=block.stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(width)
        self.conv3 = Conv2d(width, out, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out)
        self.downsample: Optional[nn.Sequential] = None
        if block.downsample:
            self.downsample = nn.Sequential(
                Conv2d(block.inplanes, out, 1, stride=block.stride, bias=False), nn.BatchNorm2d(out)
            )

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        y = F.relu(self.bn1(self.conv1(x)))
        y = F.relu(self.bn2(self.conv2(y)))
        y = norm_and_droppath(self.conv3(y), "batch_norm", self.bn3, self.drop_path_rate, self.training)
        return F.relu(y + identity)


class SliceEncoder(nn.Module):
    """Maps (N, C, H, W) slices to (N, D) embeddings by global average pooling the last stage."""

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        self.spec = spec
        self.out_dim = spec.out_dim
        self.conv1 = Conv2d(spec.in_channels, spec.stem_width, 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(spec.stem_width)
        plan = resnet_plan(spec)
        for stage in range(len(spec.stage_planes)):
            blocks = [
                Bottleneck(b, spec.expansion, spec.drop_path_rate)
                for b in plan
                if b.name.startswith(f"layer{stage + 1}.")
            ]
            self.add_module(f"layer{stage + 1}", nn.Sequential(*blocks))
        self.n_stages = len(spec.stage_planes)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Final feature map before pooling."""
        require_ndim(x, 4, "slices")
        x = F.relu(self.bn1(self.conv1(x)))
        x = pool(x, "max", window=3, stride=2, padding=1)
        for stage in range(self.n_stages):
            x = getattr(self, f"layer{stage + 1}")(x)
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return pool(self.features(x), "global_avg")


def encode_slices(volume: torch.Tensor, encoder: SliceEncoder) -> torch.Tensor:
    """Embed every slice of (S, H, W) or (B, S, H, W) independently; returns (S, D) or (B, S, D)."""
    require_ndim(volume, (3, 4), "volume")
    batched = volume if volume.ndim == 4 else volume.unsqueeze(0)
    b, s = batched.shape[:2]
    if encoder.spec.in_channels != 1:
        raise ShapeError("encode_slices feeds single-channel slices")
    flat = rearrange(batched, "b s h w -> (b s) 1 h w")
    emb = rearrange(encoder(flat), "(b s) d -> b s d", b=b, s=s)
    return emb if volume.ndim == 4 else emb[0]
